//! Executes a resolved config and writes `report.json`, `metadata.json` and CSV curves.
//!
//! Data files depend only on the config; the creation time goes to `metadata.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{parse_config, ConfigError, ExperimentKind, ExperimentSetup, Job, RunConfig};
use crate::histories::{
    decoherence_functional, fit_deficit_exponent, make_history_pair, zeno_survival_curve, DecoherenceReport,
    HistoryEvaluator, SurvivalPoint,
};
use crate::model::Grid;
use crate::propagators::{Method, RestrictedDynamics};
use crate::scenarios::{run_scenario, ScanPoint, ScenarioId, ScenarioOutcome};
use crate::{Result, ZenoError};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SURVIVAL_COLUMNS: [&str; 3] = ["n", "survival", "deficit"];
pub const DT_SCAN_COLUMNS: [&str; 6] = ["dt", "d_normalized", "p_remain", "p_leave", "re_D", "im_D"];
pub const CONVERGE_COLUMNS: [&str; 2] = ["n", "defect"];
pub const LAMBDA_SCAN_COLUMNS: [&str; 5] = ["lambda", "d_normalized", "p_remain", "p_subspace", "row_sum"];

/// Process exit codes of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Io,
    Config,
    Numerical,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Io => 1,
            ExitStatus::Config => 2,
            ExitStatus::Numerical => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub kind: &'static str,
    pub message: String,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub artifact_version: &'static str,
    pub status: &'static str,
    pub scenario: Option<ScenarioId>,
    pub experiment: Option<ExperimentKind>,
    pub report: Option<DecoherenceReport>,
    pub outcome: Option<ScenarioOutcome>,
    pub summary: BTreeMap<String, f64>,
    pub error: Option<ErrorRecord>,
}

impl RunReport {
    fn empty(job: &Job) -> Self {
        let (scenario, experiment) = match job {
            Job::Scenario(spec) => (Some(spec.id()), None),
            Job::Experiment(setup) => (None, Some(setup.kind)),
        };
        RunReport {
            artifact_version: ARTIFACT_VERSION,
            status: "ok",
            scenario,
            experiment,
            report: None,
            outcome: None,
            summary: BTreeMap::new(),
            error: None,
        }
    }
}

/// One CSV curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub tables: Vec<Table>,
    pub grid: Option<Grid>,
}

fn survival_table(points: &[SurvivalPoint]) -> Table {
    Table {
        name: "survival",
        columns: &SURVIVAL_COLUMNS,
        rows: points
            .iter()
            .map(|p| vec![p.n as f64, p.survival, p.deficit()])
            .collect(),
    }
}

fn dt_scan_table(points: &[ScanPoint]) -> Table {
    Table {
        name: "dt_scan",
        columns: &DT_SCAN_COLUMNS,
        rows: points
            .iter()
            .map(|p| vec![p.dt, p.d_normalized, p.p_remain, p.p_leave, p.re_d, p.im_d])
            .collect(),
    }
}

/// Runs the job. Errors are numerical; configuration problems were caught by `resolve`.
pub fn execute(job: &Job) -> Result<RunArtifacts> {
    let mut report = RunReport::empty(job);
    let mut tables = Vec::new();
    let grid = match job {
        Job::Scenario(spec) => {
            let outcome = run_scenario(spec)?;
            if !outcome.survival.is_empty() {
                tables.push(survival_table(&outcome.survival));
            }
            if !outcome.dt_scan.is_empty() {
                tables.push(dt_scan_table(&outcome.dt_scan));
            }
            if !outcome.lambda_scan.is_empty() {
                tables.push(Table {
                    name: "lambda_scan",
                    columns: &LAMBDA_SCAN_COLUMNS,
                    rows: outcome
                        .lambda_scan
                        .iter()
                        .map(|p| vec![p.lambda, p.d_normalized, p.p_remain, p.p_subspace, p.row_sum])
                        .collect(),
                });
            }
            report.summary.insert("row_sum".into(), outcome.report.row_sum());
            report
                .summary
                .insert("verdict_matches".into(), f64::from(u8::from(outcome.verdict_matches)));
            report.report = Some(outcome.report.clone());
            let grid = outcome.grid;
            report.outcome = Some(outcome);
            grid
        }
        Job::Experiment(setup) => {
            run_experiment(setup, &mut report, &mut tables)?;
            setup.model.grid().copied()
        }
    };
    Ok(RunArtifacts { report, tables, grid })
}

fn run_experiment(setup: &ExperimentSetup, report: &mut RunReport, tables: &mut Vec<Table>) -> Result<()> {
    let missing = |what: &str| ZenoError::Precondition(format!("resolved experiment lacks {what}"));
    match setup.kind {
        ExperimentKind::Verdict => {
            let psi = setup.state.as_ref().ok_or_else(|| missing("a state"))?;
            let dt = setup.dt.ok_or_else(|| missing("dt"))?;
            let r = match setup.n {
                Some(n) => {
                    let pair = make_history_pair(&setup.model, &setup.projector, dt, Method::Product(n))?;
                    decoherence_functional(&pair, psi, setup.tolerance)?
                }
                None => HistoryEvaluator::new(&setup.model, &setup.projector, psi, setup.tolerance)?.report(dt),
            };
            report.summary.insert("row_sum".into(), r.row_sum());
            report.report = Some(r);
        }
        ExperimentKind::Survival => {
            let psi = setup.state.as_ref().ok_or_else(|| missing("a state"))?;
            let dt = setup.dt.ok_or_else(|| missing("dt"))?;
            let points = zeno_survival_curve(&setup.model, &setup.projector, psi, dt, &setup.n_list)?;
            if let Some(slope) = fit_deficit_exponent(&points) {
                report.summary.insert("deficit_exponent".into(), slope);
            }
            if let Some(last) = points.last() {
                report.summary.insert("final_survival".into(), last.survival);
            }
            let r = HistoryEvaluator::new(&setup.model, &setup.projector, psi, setup.tolerance)?.report(dt);
            report.summary.insert("row_sum".into(), r.row_sum());
            report.report = Some(r);
            tables.push(survival_table(&points));
        }
        ExperimentKind::DtScan => {
            let psi = setup.state.as_ref().ok_or_else(|| missing("a state"))?;
            let grid = setup.dt_grid.ok_or_else(|| missing("a dt grid"))?;
            let evaluator = HistoryEvaluator::new(&setup.model, &setup.projector, psi, setup.tolerance)?;
            let scan = evaluator.scan(&grid.values()?);
            let worst_row = scan.iter().map(|r| (r.row_sum() - 1.0).abs()).fold(0.0, f64::max);
            report.summary.insert("max_row_sum_error".into(), worst_row);
            if let Some(best) = scan
                .iter()
                .filter(|r| r.dt > 0.0)
                .min_by(|a, b| a.d_normalized.total_cmp(&b.d_normalized))
            {
                report.summary.insert("min_dt".into(), best.dt);
                report.summary.insert("min_d_normalized".into(), best.d_normalized);
                report.report = Some(best.clone());
            }
            let points: Vec<ScanPoint> = scan.iter().map(ScanPoint::from).collect();
            tables.push(dt_scan_table(&points));
        }
        ExperimentKind::Converge => {
            let dt = setup.dt.ok_or_else(|| missing("dt"))?;
            let dynamics = RestrictedDynamics::new(&setup.model, &setup.projector)?;
            let defects = setup
                .n_list
                .iter()
                .map(|&n| dynamics.product_defect(dt, n).map(|d| (n, d)))
                .collect::<Result<Vec<_>>>()?;
            let monotone = defects.windows(2).all(|w| w[1].1 < w[0].1);
            report.summary.insert("monotone".into(), f64::from(u8::from(monotone)));
            if let (Some(first), Some(last)) = (defects.first(), defects.last()) {
                if first.1 > 0.0 {
                    report.summary.insert("last_over_first".into(), last.1 / first.1);
                }
            }
            tables.push(Table {
                name: "converge",
                columns: &CONVERGE_COLUMNS,
                rows: defects.iter().map(|&(n, d)| vec![n as f64, d]).collect(),
            });
        }
    }
    Ok(())
}

/// CSV text: `#` metadata lines, the column header, then data rows.
pub fn render_csv(table: &Table, config: &RunConfig, grid: Option<&Grid>) -> std::io::Result<String> {
    let mut buf = Vec::new();
    writeln!(buf, "# zeno {ARTIFACT_VERSION}")?;
    if let Some(g) = grid {
        writeln!(buf, "# grid n={} length={} mass={} dx={}", g.n, g.length, g.mass, g.dx)?;
    }
    writeln!(buf, "# config {}", serde_json::to_string(config)?)?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(table.columns)?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct Metadata<'a> {
    artifact_version: &'static str,
    created_unix: u64,
    config: &'a RunConfig,
    grid: Option<&'a Grid>,
    files: Vec<String>,
}

/// What happened in a run, for the CLI to print.
#[derive(Debug)]
pub struct RunResult {
    pub status: ExitStatus,
    pub message: String,
    pub files: Vec<PathBuf>,
}

impl RunResult {
    fn config(e: ConfigError) -> Self {
        RunResult {
            status: ExitStatus::Config,
            message: e.to_string(),
            files: Vec::new(),
        }
    }
}

fn write_outputs(
    out: &Path,
    config: &RunConfig,
    report: &RunReport,
    tables: &[Table],
    grid: Option<&Grid>,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> std::io::Result<()> {
        let path = out.join(&name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put("report.json".into(), serde_json::to_string_pretty(report)? + "\n")?;
    for t in tables {
        put(t.file_name(), render_csv(t, config, grid)?)?;
    }
    let mut files: Vec<String> = vec!["report.json".into()];
    files.extend(tables.iter().map(Table::file_name));
    let meta = Metadata {
        artifact_version: ARTIFACT_VERSION,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config,
        grid,
        files,
    };
    put("metadata.json".into(), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(written)
}

/// Parses `text`, runs it and writes results under `out` (or the config's `out`).
///
/// A config error writes nothing. A numerical failure writes `report.json` with an
/// error record and `metadata.json`, but no curves.
pub fn run_config_text(text: &str, out: Option<&Path>) -> RunResult {
    let config = match parse_config(text) {
        Ok(c) => c,
        Err(e) => return RunResult::config(e),
    };
    let out_dir = match out.map(Path::to_path_buf).or_else(|| config.out.clone()) {
        Some(d) => d,
        None => return RunResult::config(ConfigError {
            path: "out".into(),
            message: "no output directory given".into(),
        }),
    };
    let job = match config.resolve() {
        Ok(j) => j,
        Err(e) => return RunResult::config(e),
    };
    let (status, message, report, tables, grid) = match execute(&job) {
        Ok(a) => {
            let msg = match &a.report.report {
                Some(r) => format!("verdict {} (d_normalized {:e})", r.verdict.as_str(), r.d_normalized),
                None => "done".to_string(),
            };
            (ExitStatus::Success, msg, a.report, a.tables, a.grid)
        }
        Err(e) => {
            let mut report = RunReport::empty(&job);
            report.status = "numerical_error";
            report.error = Some(ErrorRecord {
                kind: error_kind(&e),
                message: e.to_string(),
            });
            let grid = match &job {
                Job::Experiment(s) => s.model.grid().copied(),
                Job::Scenario(_) => None,
            };
            (ExitStatus::Numerical, e.to_string(), report, Vec::new(), grid)
        }
    };
    match write_outputs(&out_dir, &config, &report, &tables, grid.as_ref()) {
        Ok(files) => RunResult { status, message, files },
        Err(e) => RunResult {
            status: ExitStatus::Io,
            message: format!("writing {}: {e}", out_dir.display()),
            files: Vec::new(),
        },
    }
}

fn error_kind(e: &ZenoError) -> &'static str {
    match e {
        ZenoError::InvalidParameter { .. } => "invalid_parameter",
        ZenoError::NotHermitian { .. } => "not_hermitian",
        ZenoError::NotProjector { .. } => "not_projector",
        ZenoError::NotUnitary { .. } => "not_unitary",
        ZenoError::DimensionMismatch { .. } => "dimension_mismatch",
        ZenoError::PacketLeak { .. } => "packet_leak",
        ZenoError::Precondition(_) => "precondition",
        ZenoError::Unsupported(_) => "unsupported",
        ZenoError::EigenFailure { .. } => "eigen_failure",
    }
}

/// `validate`: parse and build everything without evolving.
pub fn validate_config_text(text: &str) -> std::result::Result<Job, ConfigError> {
    parse_config(text)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("zeno-runner-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn malformed_config_writes_nothing() {
        let out = tmp("malformed");
        let r = run_config_text("{\"scenario\": ", Some(&out));
        assert_eq!(r.status.code(), 2);
        assert!(!out.exists());
        let r = run_config_text(r#"{"scenario": "case_a", "typo": 1}"#, Some(&out));
        assert_eq!(r.status, ExitStatus::Config);
        assert!(!out.exists());
    }

    #[test]
    fn numerical_failure_leaves_partial_report() {
        let out = tmp("leak");
        // the default case (c) packet reaches L/2 by dt = 0.05
        let r = run_config_text(r#"{"scenario": "case_c", "time": {"dt": 0.05}}"#, Some(&out));
        assert_eq!(r.status.code(), 3, "{}", r.message);
        let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
        assert_eq!(report["status"], "numerical_error");
        assert_eq!(report["error"]["kind"], "precondition");
        assert!(out.join("metadata.json").exists());
        assert!(!out.join("dt_scan.csv").exists());
        fs::remove_dir_all(out).unwrap();
    }

    #[test]
    fn survival_csv_is_reproducible() {
        let cfg = r#"{"experiment": "survival", "model": {"kind": "two_level"},
                      "time": {"dt": 3.141592653589793, "n_list": [1, 2, 4, 10]}}"#;
        let (a, b) = (tmp("s1"), tmp("s2"));
        assert_eq!(run_config_text(cfg, Some(&a)).status.code(), 0);
        assert_eq!(run_config_text(cfg, Some(&b)).status.code(), 0);
        let ta = fs::read_to_string(a.join("survival.csv")).unwrap();
        let tb = fs::read_to_string(b.join("survival.csv")).unwrap();
        assert_eq!(ta, tb);
        let header = ta.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "n,survival,deficit");
        let ten = ta.lines().last().unwrap();
        let survival: f64 = ten.split(',').nth(1).unwrap().parse().unwrap();
        assert!((survival - (std::f64::consts::PI / 20.0).cos().powi(20)).abs() < 1e-12);
        fs::remove_dir_all(a).unwrap();
        fs::remove_dir_all(b).unwrap();
    }

    #[test]
    fn converge_table_columns() {
        let cfg = r#"{"experiment": "converge", "model": {"kind": "grid", "n": 32},
                      "region": {"kind": "interval", "a": 0.0, "b": 0.5},
                      "time": {"dt": 0.05, "n_list": [16, 32, 64]}}"#;
        let job = validate_config_text(cfg).unwrap();
        let art = execute(&job).unwrap();
        assert_eq!(art.tables.len(), 1);
        assert_eq!(art.tables[0].columns, &CONVERGE_COLUMNS);
        assert_eq!(art.tables[0].rows.len(), 3);
        assert!(art.report.report.is_none());
    }

    #[test]
    fn verdict_with_slices_uses_product_method() {
        let cfg = r#"{"experiment": "verdict", "model": {"kind": "two_level"}, "time": {"dt": 1.0, "n": 8}}"#;
        let art = execute(&validate_config_text(cfg).unwrap()).unwrap();
        let r = art.report.report.unwrap();
        assert_eq!(r.method, Method::Product(8));
        assert!((r.row_sum() - 1.0).abs() < 1e-12);
    }
}
