//! Comma-separated observation files: a required `x,y` header (optionally
//! `x,y,sigma`), `#` comment lines and blank lines ignored.

use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Reorders observations by increasing `x`.
    pub fn sorted(mut self) -> Self {
        let mut idx: Vec<usize> = (0..self.x.len()).collect();
        idx.sort_by(|&a, &b| self.x[a].total_cmp(&self.x[b]));
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        self.x = pick(&self.x);
        self.y = pick(&self.y);
        self.sigma = self.sigma.as_deref().map(pick);
        self
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse { line, message: message.into() }
}

pub fn parse_observations(text: &str) -> CliResult<Observations> {
    let mut header: Option<Vec<String>> = None;
    let mut obs = Observations { x: Vec::new(), y: Vec::new(), sigma: None };
    let mut sigma = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(cols) = &header else {
            let cols: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
            if cols != ["x", "y"] && cols != ["x", "y", "sigma"] {
                return Err(parse_err(line_no, format!("expected header `x,y` or `x,y,sigma`, found `{line}`")));
            }
            header = Some(cols);
            continue;
        };
        if fields.len() != cols.len() {
            return Err(parse_err(line_no, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let mut vals = [0.0f64; 3];
        for (j, f) in fields.iter().enumerate() {
            vals[j] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("`{f}` is not a finite number in column `{}`", cols[j])))?;
        }
        obs.x.push(vals[0]);
        obs.y.push(vals[1]);
        if cols.len() == 3 {
            if vals[2] <= 0.0 {
                return Err(parse_err(line_no, "sigma must be positive"));
            }
            sigma.push(vals[2]);
        }
    }
    let cols = header.ok_or_else(|| parse_err(1, "missing header `x,y`"))?;
    if cols.len() == 3 {
        obs.sigma = Some(sigma);
    }
    Ok(obs)
}

pub fn read_observations(path: &Path) -> CliResult<Observations> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_observations(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let obs = parse_observations("# data\nx,y\n0.0,1.0\n\n# mid\n1.0,2.5\n").unwrap();
        assert_eq!(obs.x, vec![0.0, 1.0]);
        assert_eq!(obs.y, vec![1.0, 2.5]);
        assert!(obs.sigma.is_none());
    }

    #[test]
    fn malformed_value_reports_line() {
        match parse_observations("x,y\n0.0,1.0\n0.5,abc\n") {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_is_required() {
        assert!(matches!(parse_observations("0.0,1.0\n"), Err(CliError::Parse { line: 1, .. })));
        assert!(matches!(parse_observations(""), Err(CliError::Parse { .. })));
    }

    #[test]
    fn sigma_column() {
        let obs = parse_observations("x,y,sigma\n0.5,1,2\n0.1,3,1\n").unwrap().sorted();
        assert_eq!(obs.x, vec![0.1, 0.5]);
        assert_eq!(obs.sigma.unwrap(), vec![1.0, 2.0]);
        assert!(matches!(parse_observations("x,y,sigma\n0.5,1,0\n"), Err(CliError::Parse { line: 2, .. })));
    }

    #[test]
    fn wrong_field_count() {
        assert!(matches!(parse_observations("x,y\n0.5\n"), Err(CliError::Parse { line: 2, .. })));
    }
}
