//! Result documents and their two renderings: a JSON record document and a
//! comma-separated table with a commented header.

use serde::{Deserialize, Serialize};

use crate::config::{Format, RunConfig};

pub const TOOL: &str = "lpa";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Envelope carried by every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<R> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub result: R,
}

impl<R> Document<R> {
    pub fn new(command: &str, config: &RunConfig, result: R) -> Self {
        Document {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            result,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Text(String),
    Empty,
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// Reals with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_real(*v),
            Cell::Text(s) if s.contains(',') || s.contains('"') => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra `#` lines after the header lines.
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), ..Table::default() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Results that also have a tabular form.
pub trait Tabular {
    fn table(&self) -> Table;
}

pub fn render<R: Serialize + Tabular>(doc: &Document<R>, format: Format) -> String {
    match format {
        Format::Records => {
            let mut s = serde_json::to_string_pretty(doc).expect("documents serialize");
            s.push('\n');
            s
        }
        Format::Table => {
            let table = doc.result.table();
            let mut s = format!("# {} {}\n# command: {}\n# seed: {}\n", doc.tool, doc.version, doc.command, doc.seed);
            let config = serde_json::to_string(&doc.config).expect("config serializes");
            s.push_str(&format!("# config: {config}\n"));
            for n in &table.notes {
                s.push_str(&format!("# {n}\n"));
            }
            s.push_str(&table.columns.join(","));
            s.push('\n');
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(Cell::render).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            s
        }
    }
}
