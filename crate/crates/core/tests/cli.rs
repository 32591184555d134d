use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TEST_MODEL: &str = r#"{"p": [[0.9, 0.1], [0.2, 0.8]], "q": [[0.9, 0.1], [0.1, 0.9]]}"#;
const UNIFORM_Q: &str = r#"{"p": [[0.9, 0.1], [0.2, 0.8]], "q": [[0.5, 0.5], [0.5, 0.5]]}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hmm-memory"));
    c.env_remove("HMM_MEMORY_OUT_DIR");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(d.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(run(d.path(), &["verify", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &[]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["check", "--seed", "1", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(d.path(), &["check", "--seed", "1", "--method", "median"]).status.code(), Some(1));
    let no_model = run(d.path(), &["check", "--seed", "1"]);
    assert_eq!(no_model.status.code(), Some(1));
    assert!(stderr(&no_model).contains("model"));
}

#[test]
fn check_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "good.json", TEST_MODEL);
    write(d.path(), "blind.json", UNIFORM_Q);

    let ok = run(d.path(), &["check", "--seed", "1", "--model", "good.json"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let stdout = String::from_utf8(ok.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let report = read_json(&d.path().join("check.json"));
    assert_eq!(report["result"]["h1_holds"], true);
    assert_eq!(report["result"]["h2_holds"], true);
    assert!((report["result"]["alpha"].as_f64().unwrap() - 5.0 / 7.0).abs() < 1e-12);

    let blind = run(d.path(), &["check", "--seed", "1", "--model", "blind.json"]);
    assert_eq!(blind.status.code(), Some(2));
    assert_eq!(read_json(&d.path().join("check.json"))["result"]["h2_holds"], false);
}

#[test]
fn verify_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.json", TEST_MODEL);
    let small = ["--seed", "4", "--model", "m.json", "--n-lyap", "200000", "--windows", "6"];

    let mut args = vec!["verify"];
    args.extend_from_slice(&small);
    let ok = run(d.path(), &args);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let v = read_json(&d.path().join("verify.json"));
    assert_eq!(v["result"]["report"]["theorem2_attained"], true);
    assert_eq!(v["result"]["windows"].as_array().unwrap().len(), 6);

    args.extend_from_slice(&["--tol", "1e-9"]);
    assert_eq!(run(d.path(), &args).status.code(), Some(3));
}

#[test]
fn minimal_config_gets_defaults_echoed() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "cfg.json", &format!(r#"{{"seed": 12, "model": {TEST_MODEL}}}"#));
    let o = run(d.path(), &["check", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cfg = &read_json(&d.path().join("check.json"))["config"];
    assert_eq!(cfg["seed"], 12);
    assert_eq!(cfg["n_max"], 400);
    assert_eq!(cfg["n_lyap"], 1_000_000);
    assert_eq!(cfg["tol"], 0.05);
    assert_eq!(cfg["method"], "regression");
    assert_eq!(cfg["mode"], "empirical");
    assert!(cfg.get("output").is_none());
}

#[test]
fn config_schema_errors() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "unknown.json", r#"{"seed": 1, "n_maxx": 10}"#);
    let o = run(d.path(), &["check", "--config", "unknown.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_maxx"), "{}", stderr(&o));

    write(d.path(), "noseed.json", &format!(r#"{{"model": {TEST_MODEL}}}"#));
    let o = run(d.path(), &["check", "--config", "noseed.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    write(d.path(), "zero.json", r#"{"seed": 1, "windows": 0}"#);
    let o = run(d.path(), &["check", "--config", "zero.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("windows"), "{}", stderr(&o));
}

#[test]
fn output_directory_override() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.json", TEST_MODEL);
    let env_dir = d.path().join("from-env");
    let o = bin()
        .current_dir(d.path())
        .env("HMM_MEMORY_OUT_DIR", &env_dir)
        .args(["simulate", "--seed", "2", "--model", "m.json", "--path-len", "50"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env_dir.join("path.csv").exists());

    let flag_dir = d.path().join("from-flag");
    bin()
        .current_dir(d.path())
        .env("HMM_MEMORY_OUT_DIR", &env_dir)
        .args(["simulate", "--seed", "2", "--model", "m.json", "--path-len", "50", "--out"])
        .arg(&flag_dir)
        .output()
        .unwrap();
    assert!(flag_dir.join("path.csv").exists());
    assert_eq!(
        std::fs::read(env_dir.join("path.csv")).unwrap(),
        std::fs::read(flag_dir.join("path.csv")).unwrap()
    );
}

#[test]
fn csv_layouts() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.json", TEST_MODEL);
    let base = ["--seed", "3", "--model", "m.json", "--n-max", "40", "--n-lyap", "5000", "--steps", "20000"];
    for cmd in ["simulate", "lyapunov", "decay", "perturb-sweep"] {
        let mut args = vec![cmd];
        args.extend_from_slice(&base);
        let o = run(d.path(), &args);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let header = |f: &str| {
        let text = std::fs::read_to_string(d.path().join(f)).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config: {"));
        lines.next().unwrap().to_owned()
    };
    assert_eq!(header("path.csv"), "t,x,z");
    assert_eq!(header("lyapunov.csv"), "n,lambda1,lambda2");
    assert_eq!(header("decay.csv"), "triple,n,delta,log_abs_delta,censored");
    assert_eq!(
        header("perturb_sweep.csv"),
        "epsilon,lambda1_qr,lambda2_qr,lambda1_birkhoff,ledet_identity_residual,rate_bound,best_triple_tau"
    );
    let decay = std::fs::read_to_string(d.path().join("decay.csv")).unwrap();
    assert_eq!(decay.lines().count(), 2 + 8 * 40);
}

#[test]
fn rates_report_both_methods_and_filter() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "m.json", TEST_MODEL);
    let o = run(
        d.path(),
        &["rates", "--seed", "5", "--model", "m.json", "--triples", "1-1-2,2-2-1", "--method", "tail-max"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &read_json(&d.path().join("rates.json"))["result"];
    let rows = r["rates"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["triple"], "1-1-2");
    assert_eq!(rows[0]["method"], "tail-max");
    assert_eq!(rows[0]["window"], serde_json::json!([200, 400]));
    assert_eq!(r["alternative_rates"][0]["method"], "regression");
}

#[test]
fn rigorous_sweep_rejects_practical_epsilon() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["perturb-sweep", "--seed", "1", "--mode", "rigorous", "--eps-grid", "0.01", "--steps", "1000"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("threshold"), "{}", stderr(&o));
}

#[test]
fn binary_model_passes_check() {
    let hmm = hmm_memory::build_perturb(0.9, 0.2, 0.1).unwrap().to_hmm().unwrap();
    let spec = serde_json::to_string(&hmm_memory::model::ModelSpec::from(&hmm)).unwrap();
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "flip.json", &spec);
    let o = run(d.path(), &["check", "--seed", "1", "--model", "flip.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
