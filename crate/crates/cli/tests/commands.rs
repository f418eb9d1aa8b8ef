use std::path::Path;
use std::process::Command as Process;

use lpa_cli::commands::{self, ComplexityReport, EstimateResult};
use lpa_cli::config::{self, Format, RunConfig};
use lpa_cli::error::CliError;
use lpa_cli::output::{render, Document};
use lpa_cli::{run_command, Command};

fn cfg(overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    config::load(None, &o).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn lpa(args: &[&str]) -> std::process::Output {
    Process::new(env!("CARGO_BIN_EXE_lpa")).args(args).output().unwrap()
}

const TINY: [&str; 4] = ["estimate.p=1", "estimate.K=2", "estimate.h1=0.5", "estimate.u=1.5"];

#[test]
fn estimate_constant_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x,y\n0.0,1.0\n1.0,1.0\n");
    let res = commands::estimate(&cfg(&TINY), Some(&data)).unwrap();
    let r = &res.records[0];
    assert_eq!(r.k_hat, 2);
    assert!((r.f_hat - 1.0).abs() < 1e-12);
    assert_eq!(r.t_triangle, vec![vec![r.t_triangle[0][0]]]);
    assert!(r.t_triangle[0][0].abs() < 1e-20);
}

#[test]
fn estimate_parse_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "x,y\n0.0,1.0\n0.5,abc\n");
    match commands::estimate(&cfg(&TINY), Some(&data)) {
        Err(CliError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
    let out = lpa(&["estimate", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn estimate_document_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = std::iter::once("x,y".to_string())
        .chain((0..60).map(|i| {
            let x = i as f64 / 59.0;
            format!("{x},{}", (6.0 * x).sin() + 0.1 * ((i * 37 % 11) as f64 - 5.0) / 5.0)
        }))
        .collect::<Vec<_>>()
        .join("\n");
    let data = write(dir.path(), "d.csv", &text);
    let c = cfg(&["estimate.points=[0.25, 0.5, 0.8]", "estimate.h1=0.05", "estimate.u=1.3", "estimate.K=6"]);
    let res = commands::estimate(&c, Some(&data)).unwrap();
    assert_eq!(res.records.len(), 3);
    let doc = Document::new("estimate", &c, res);
    let json = render(&doc, Format::Records);
    let back: Document<EstimateResult> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, doc);
}

#[test]
fn estimate_with_cv_file_and_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x,y\n0.0,0.3\n0.25,1.1\n0.5,0.9\n0.75,1.4\n1.0,0.8\n");
    let cal = cfg(&["calibrate.p=1", "calibrate.K=2", "calibrate.u=1.5"]);
    let cv_text = run_command(Command::Calibrate, &cal, None).unwrap();
    let cv_path = write(dir.path(), "cv.json", &cv_text);
    let file_cfg = cfg(&[
        &TINY[..],
        &["estimate.cv.source=file", &format!("estimate.cv.file=\"{}\"", cv_path.display())],
    ]
    .concat());
    let from_file = commands::estimate(&file_cfg, Some(&data)).unwrap();
    let theo = commands::estimate(&cfg(&TINY), Some(&data)).unwrap();
    assert_eq!(from_file.records, theo.records);

    let mc = cfg(&[&TINY[..], &["estimate.cv.source=monte-carlo", "estimate.cv.replicates=400"]].concat());
    let res = commands::estimate(&mc, Some(&data)).unwrap();
    assert_eq!(res.records[0].thresholds.len(), 1);
}

#[test]
fn calibrate_theoretical_thresholds_decrease() {
    let cv = commands::calibrate(&cfg(&[]), None).unwrap();
    assert_eq!(cv.thresholds.len(), 4);
    assert!(cv.thresholds.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn calibrate_monte_carlo_is_byte_identical() {
    let run = |threads: &str| {
        let out = lpa(&[
            "calibrate",
            "--set",
            "calibrate.method=monte-carlo",
            "--set",
            "calibrate.replicates=2000",
            "--set",
            "calibrate.K=4",
            "--seed",
            "11",
            "--threads",
            threads,
        ]);
        assert!(out.status.success());
        out.stdout
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    // only the echoed thread count may differ
    let b = String::from_utf8(run("3")).unwrap().replace("\"threads\": 3", "\"threads\": 1");
    assert_eq!(String::from_utf8(a).unwrap(), b);
}

#[test]
fn calibrate_rejects_zero_alpha() {
    assert!(matches!(commands::calibrate(&cfg(&["calibrate.alpha=0"]), None), Err(CliError::Validation(_))));
    assert_eq!(lpa(&["calibrate", "--set", "calibrate.alpha=0"]).status.code(), Some(2));
}

#[test]
fn same_process_and_separate_runs_agree() {
    let c = cfg(&["complexity.field=\"anderson-darling\"", "complexity.d=2"]);
    let first = run_command(Command::Complexity, &c, None).unwrap();
    let second = run_command(Command::Complexity, &c, None).unwrap();
    assert_eq!(first, second);
    let out = lpa(&["complexity", "--set", "complexity.field=anderson-darling", "--set", "complexity.d=2"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), first);
}

#[test]
fn risk_parametric_linear_passes() {
    let res = commands::risk(&cfg(&["risk.replicates=4000"])).unwrap();
    for c in &res.checks {
        assert!(c.passed, "{}: {}", c.name, c.detail);
    }
    let oracle = res.oracle.as_ref().unwrap();
    assert!(oracle.passed);
    let k = res.scenario.scales;
    let reps = res.scenario.replicates as f64;
    let frac = oracle.k_hat_histogram[k - 1] as f64 / reps;
    let floor = 1.0 - res.scenario.alpha;
    assert!(frac >= floor - 3.0 * (floor * (1.0 - floor) / reps).sqrt());
}

#[test]
fn risk_kink_has_interior_oracle() {
    let res = commands::risk(&cfg(&["risk.scenario=kink", "risk.replicates=2000"])).unwrap();
    let oracle = res.oracle.unwrap();
    assert!(oracle.oracle_index < res.scenario.scales);
}

#[test]
fn risk_validation() {
    assert!(matches!(commands::risk(&cfg(&["risk.replicates=0"])), Err(CliError::Validation(_))));
    assert_eq!(lpa(&["risk", "--set", "risk.replicates=0"]).status.code(), Some(2));
    assert_eq!(lpa(&["risk", "--set", "risk.scenario=nope"]).status.code(), Some(2));
}

#[test]
fn complexity_examples() {
    let r = commands::complexity(&cfg(&["complexity.epsilon=0.7071", "complexity.d=1"])).unwrap();
    assert_eq!(r.rows[0].n_exact, Some(1));

    let g = commands::complexity(&cfg(&[
        "complexity.field=\"geometric:0.5\"",
        "complexity.action=\"asymptotic\"",
        "complexity.d=10",
    ]))
    .unwrap();
    let n = g.rows[0].n_asymptotic;
    assert!(n.is_finite() && n > 0.0);
    let sigma = g.moments.sigma2.sqrt();
    let h = 2f64.ln();
    assert!((g.constant_k - h / (sigma * (1.0 - (-2.0 * h).exp()))).abs() < 1e-12);

    assert!(matches!(commands::complexity(&cfg(&["complexity.d=0"])), Err(CliError::Validation(_))));
    assert_eq!(lpa(&["complexity", "--set", "complexity.d=0"]).status.code(), Some(2));
}

#[test]
fn complexity_budget_and_unknown_field() {
    let out = lpa(&["complexity", "--set", "complexity.d=12", "--set", "complexity.budget=1000"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("count lies in"));
    assert_eq!(lpa(&["complexity", "--set", "complexity.field=brownian-pillowcase"]).status.code(), Some(2));
}

#[test]
fn complexity_table_renders_columns() {
    let c = cfg(&["complexity.action=\"table\"", "complexity.d_max=3", "format=\"table\""]);
    let text = run_command(Command::Complexity, &c, None).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "d,n_exact,n_asymptotic,ratio,theta,zeta,lower,upper");
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
    let json = run_command(Command::Complexity, &RunConfig { format: Format::Records, ..c }, None).unwrap();
    let doc: Document<ComplexityReport> = serde_json::from_str(&json).unwrap();
    assert_eq!(doc.result.rows.len(), 3);
    assert_eq!(doc.config.complexity.d_max, 3);
}

#[test]
fn config_file_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "c.toml", "[complexity]\nfield = \"geometric:0.5\"\nd = 2\n");
    let out = lpa(&["complexity", "--config", good.to_str().unwrap()]);
    assert!(out.status.success());
    let doc: Document<ComplexityReport> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc.result.rows[0].d, 2);
    assert_eq!(doc.tool, "lpa");
    let bad = write(dir.path(), "b.toml", "[complexity\n");
    assert_eq!(lpa(&["complexity", "--config", bad.to_str().unwrap()]).status.code(), Some(4));
}
