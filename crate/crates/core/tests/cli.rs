use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bbp_lab::experiment::{prepare, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bbp-lab"))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("run").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

#[test]
fn list_names_every_experiment() {
    let out = bin().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["bbp_lln", "fluctuation_ks", "spectral_measure", "laplace", "identities", "diagram_suite", "oracle_crosscheck"] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn bundled_configs_parse_and_prepare() {
    let mut seen = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        prepare(cfg, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 5);
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"experiment": "bbp_lln""#,
        r#"{"experiment": "no_such_thing"}"#,
        r#"{"experiment": "identities", "surprise": 1}"#,
        r#"{"experiment": "bbp_lln", "trials": 10}"#,
        r#"{"experiment": "oracle_crosscheck", "model": {"profile": {"kind": "uniform", "n": 3},
            "law": "rademacher", "beta": 1}}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = dir.path().join(format!("bad{i}.json"));
        fs::write(&cfg, text).unwrap();
        let out_dir = dir.path().join(format!("out{i}"));
        let out = run_config(&cfg, &out_dir, &[]);
        assert_eq!(out.status.code(), Some(2), "case {i}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out_dir.exists(), "case {i} wrote outputs");
    }
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(&dir.path().join("absent.json"), &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(&configs_dir().join("identities.json"), &dir.path().join("out"), &["--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn identities_run_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run_config(&configs_dir().join("identities.json"), &out_dir, &["--threads", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert_eq!(report["experiment"], "identities");
    assert!(report["checks"].as_array().unwrap().len() >= 3);
}

#[test]
fn seed_override_is_recorded_and_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bbp.json");
    fs::write(
        &cfg,
        r#"{"experiment": "bbp_lln", "seed": 1, "trials": 30,
            "model": {"profile": {"kind": "uniform", "n": 60}, "law": "gaussian", "beta": 1,
                      "deformation": {"positions": [1], "a_tilde": [[3.0]]}},
            "tolerances": {"abs": 0.5}}"#,
    )
    .unwrap();
    let read = |name: &str, seed: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = run_config(&cfg, &out_dir, &["--seed", seed, "--threads", threads]);
        assert!(out.status.code() == Some(0) || out.status.code() == Some(1));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
        let csvs: Vec<String> = {
            let mut names: Vec<PathBuf> = fs::read_dir(&out_dir)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            names.sort();
            names.iter().map(|p| fs::read_to_string(p).unwrap()).collect()
        };
        (report, csvs)
    };
    let (r1, c1) = read("a", "99", "1");
    let (r2, c2) = read("b", "99", "2");
    let (_, c3) = read("c", "100", "1");
    assert_eq!(r1["seed"], 99);
    assert!(!c1.is_empty());
    assert_eq!(c1, c2);
    assert_ne!(c1, c3);
    assert_eq!(r1["config_hash"], r2["config_hash"]);
}
