use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn zeno() -> Command {
    Command::new(env!("CARGO_BIN_EXE_zeno"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("zeno-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn run(cfg: &Path, out: &Path) -> Output {
    zeno()
        .args(["run", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn scenarios_lists_six_ids() {
    let out = zeno().arg("scenarios").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let ids: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ids, ["case_a", "case_b", "case_c", "case_d", "crossing", "environment"]);
    assert!(text.lines().all(|l| l.split('\t').count() == 2));
    let again = zeno().arg("scenarios").output().unwrap();
    assert_eq!(text.as_bytes(), again.stdout.as_slice());
}

#[test]
fn crossing_run_interferes() {
    let out = scratch("crossing");
    let o = run(&config("crossing.json"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["report"]["verdict"], "interfering");
    assert_eq!(r["outcome"]["scenario"], "crossing");
    assert!(out.join("metadata.json").exists());
    fs::remove_dir_all(out).unwrap();
}

#[test]
fn case_a_run_is_decoherent_with_half_weight() {
    let out = scratch("case_a");
    let o = run(&config("case_a.json"), &out);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    assert_eq!(r["report"]["verdict"], "decoherent");
    let p_remain = r["report"]["p_remain"].as_f64().unwrap();
    assert!((p_remain - 0.5).abs() <= 1e-4, "{p_remain}");
    fs::remove_dir_all(out).unwrap();
}

#[test]
fn malformed_config_exits_with_config_code_and_writes_nothing() {
    let dir = scratch("malformed");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    fs::write(&cfg, r#"{"scenario": "crossing", "time": {"dt": "soon"}}"#).unwrap();
    let out = dir.join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("time.dt"));
    assert!(!out.exists());
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn numerical_failure_exits_with_distinct_code() {
    let dir = scratch("numerical");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("leaky.json");
    fs::write(&cfg, r#"{"scenario": "case_c", "time": {"dt": 0.05}}"#).unwrap();
    let out = dir.join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["status"], "numerical_error");
    assert!(r["error"]["message"].as_str().unwrap().contains("leaks"));
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn validate_reports_region_errors() {
    let dir = scratch("validate");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("region.json");
    fs::write(
        &cfg,
        r#"{"experiment": "verdict", "model": {"kind": "grid", "n": 64},
            "state": {"kind": "gaussian", "x0": 0.25, "sigma": 0.05},
            "region": {"kind": "interval", "a": -0.5, "b": 0.5}, "time": {"dt": 0.1}}"#,
    )
    .unwrap();
    let o = zeno().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("region"));
    for name in ["case_d_two_level.json", "survival_two_level.json", "converge_box.json", "environment.json"] {
        let o = zeno().args(["validate", "--config"]).arg(config(name)).output().unwrap();
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    fs::remove_dir_all(dir).unwrap();
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn csv_outputs_are_byte_reproducible() {
    for (name, file, header) in [
        ("case_d_two_level.json", "dt_scan.csv", "dt,d_normalized,p_remain,p_leave,re_D,im_D"),
        ("survival_two_level.json", "survival.csv", "n,survival,deficit"),
        ("converge_box.json", "converge.csv", "n,defect"),
    ] {
        let (a, b) = (scratch(&format!("{file}-a")), scratch(&format!("{file}-b")));
        assert_eq!(run(&config(name), &a).status.code(), Some(0));
        assert_eq!(run(&config(name), &b).status.code(), Some(0));
        let ta = fs::read_to_string(a.join(file)).unwrap();
        let tb = fs::read_to_string(b.join(file)).unwrap();
        let rows = data_rows(&ta);
        assert_eq!(rows[0], header);
        assert!(rows.len() > 2);
        assert_eq!(rows, data_rows(&tb));
        fs::remove_dir_all(a).unwrap();
        fs::remove_dir_all(b).unwrap();
    }
}

#[test]
fn dt_scan_rows_are_sorted_by_dt() {
    let out = scratch("sorted");
    assert_eq!(run(&config("case_d_two_level.json"), &out).status.code(), Some(0));
    let text = fs::read_to_string(out.join("dt_scan.csv")).unwrap();
    let dts: Vec<f64> = data_rows(&text)[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(dts.windows(2).all(|w| w[1] > w[0]));
    fs::remove_dir_all(out).unwrap();
}
