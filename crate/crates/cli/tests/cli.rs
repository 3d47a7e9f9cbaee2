use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_horizon");
const SMALL: &str = "[run]\nseed = 5\n[map]\nkind = henon\n[structure]\nsamples = 5000\n[green]\npoints = 500\n\
[measure]\nnz = 16\nnw = 8\n";

fn write_cfg(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn horizon(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("HORIZON_OUT").output().unwrap()
}

fn out_dir(o: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(o.stdout.clone()).unwrap().trim())
}

fn report_without_timing(dir: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn malformed_config_exits_1_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for text in ["[run]\nseed = 1\nbogus = 1\n[map]\nkind = henon\n", "[map]\nkind = henon\n", "[run]\nseed = 1\n[map]\nkind = nope\n"] {
        let cfg = write_cfg(tmp.path(), text);
        let o = horizon(&["check-structure", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
    }
    assert_eq!(horizon(&["no-such-experiment"]).status.code(), Some(1));
}

#[test]
fn structure_run_writes_report_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = horizon(&["check-structure", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out_dir(&o);
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("check-structure-"));
    let r = report_without_timing(&dir);
    assert_eq!(r["experiment"], "check-structure");
    assert_eq!(r["flags"]["horizontal_like"], true);
    assert_eq!(r["scalars"]["main_degree"], 2.0);
    let csv = fs::read_to_string(dir.join("certificate.csv")).unwrap();
    assert!(csv.starts_with("quantity,value\n"));
    let full: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert!(full["timing"]["wall_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let mut reports = Vec::new();
    for w in ["1", "2", "3"] {
        let o = horizon(&["run", "green", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", w]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let dir = out_dir(&o);
        reports.push((report_without_timing(&dir), fs::read(dir.join("green.csv")).unwrap()));
    }
    assert!(reports.windows(2).all(|p| p[0] == p[1]));
}

#[test]
fn seed_flag_and_env_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let root = tmp.path().join("env-root");
    let o = Command::new(BIN)
        .args(["check-structure", "--config", cfg.to_str().unwrap(), "--seed", "99"])
        .env("HORIZON_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let dir = out_dir(&o);
    assert!(dir.starts_with(&root));
    assert_eq!(report_without_timing(&dir)["seed"], 99);
}

#[test]
fn unreliable_measure_exits_2_with_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = horizon(&["measure", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = out_dir(&o);
    let r = report_without_timing(&dir);
    assert!(!r["unreliable"].as_array().unwrap().is_empty());
    assert!(dir.join("measure.csv").exists() && dir.join("z_marginal.svg").exists());
}
