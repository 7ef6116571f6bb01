use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pairnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairnet")).args(args).env("PAIRNET_OUT_DIR", dir).output().unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(out: Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn gen_train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = ok_json(pairnet(d, &["gen", "--n", "120", "--test-n", "60", "--seed", "3", "--name", "poly"]));
    assert_eq!(g["files"].as_array().unwrap().len(), 2);
    let train = d.join("poly.csv");
    let test = d.join("poly_test.csv");
    let header = std::fs::read_to_string(&train).unwrap().lines().next().unwrap().to_string();
    assert!(header.ends_with("t,y,mu0,mu1"));

    let t = ok_json(pairnet(
        d,
        &[
            "train", "--data", train.to_str().unwrap(), "--test", test.to_str().unwrap(), "--loss", "pair", "--psi", "identity",
            "--arch", "shallow", "--lambda", "2", "--num-neighbors", "2", "--seed", "1", "--config",
            write_config(d).to_str().unwrap(),
        ],
    ));
    assert!(t["scores"]["pehe_in"].as_f64().unwrap().is_finite());
    let out_score = t["scores"]["pehe_out"].as_f64().unwrap();
    assert!(d.join("model.model.json").exists() && d.join("model.run.json").exists());

    let e = ok_json(pairnet(d, &["eval", "--model", d.join("model.model.json").to_str().unwrap(), "--data", test.to_str().unwrap(), "--seed", "1"]));
    assert_eq!(e["pehe"].as_f64().unwrap(), out_score);
}

fn write_config(d: &Path) -> std::path::PathBuf {
    let p = d.join("train.json");
    std::fs::write(&p, r#"{"lr": 0.001, "max_epochs": 3, "patience": 2, "batch_size": 32}"#).unwrap();
    p
}

#[test]
fn pairs_are_written_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok_json(pairnet(d, &["gen", "--kind", "confounded", "--n", "80", "--name", "gauss"]));
    let p = ok_json(pairnet(
        d,
        &["pairs", "--data", d.join("gauss.csv").to_str().unwrap(), "--psi", "columns:0", "--num-neighbors", "3", "--delta-pair", "0"],
    ));
    assert_eq!(p["pairs"].as_u64().unwrap(), 240);
    let text = std::fs::read_to_string(d.join("pairs.csv")).unwrap();
    assert_eq!(text.lines().count(), 241);
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let e = err_json(pairnet(d, &["eval", "--model", "missing.json", "--data", "missing.csv"]));
    assert!(e["message"].as_str().unwrap().contains("missing"));

    let bad = d.join("bad.csv");
    std::fs::write(&bad, "x0,t,y\n0.1,0,1.0\n0.2,0.5,1.0\n").unwrap();
    let e = err_json(pairnet(d, &["pairs", "--data", bad.to_str().unwrap()]));
    assert_eq!(e["error"], "parse");

    let e = err_json(pairnet(d, &["train", "--data", bad.to_str().unwrap(), "--psi", "nonsense"]));
    assert!(e["message"].as_str().unwrap().contains("line 3") || e["error"] == "parse");
}

#[test]
fn ttest_matches_rows_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("a.csv"), "seed,pehe_out\n1,0\n2,0\n3,0\n").unwrap();
    std::fs::write(d.join("b.csv"), "seed,pehe_out\n3,3\n1,1\n2,2\n").unwrap();
    let r = ok_json(pairnet(d, &["ttest", d.join("a.csv").to_str().unwrap(), d.join("b.csv").to_str().unwrap()]));
    assert!((r["t"].as_f64().unwrap() - 3.4641).abs() < 1e-4);
    assert!((r["p"].as_f64().unwrap() - 0.0371).abs() < 1e-4);
}

#[test]
fn toys_and_verify_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let c = ok_json(pairnet(d, &["toy-corr", "--seed", "0"]));
    assert!(c["corr_pair"].as_f64().unwrap() > c["corr_factual"].as_f64().unwrap());
    let m = ok_json(pairnet(d, &["toy-mmd", "--n", "500"]));
    assert!(m["ratio"].as_f64().unwrap() > 1.0);
    let v = ok_json(pairnet(d, &["verify", "--scenes", "5", "--sweep-seeds", "1"]));
    assert_eq!(v["bound_failures"], 0);
}

#[test]
fn experiment_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    std::fs::write(
        &spec,
        r#"{
            "name": "tiny",
            "data": {"kind": "polynomial", "n_train": 120, "n_test": 60},
            "methods": [
                {"name": "pair", "loss": {"kind": "pair"}, "psi": {"kind": "identity"}},
                {"name": "factual", "loss": {"kind": "factual"}}
            ],
            "seeds": [0, 1],
            "base": {"lr": 0.001, "max_epochs": 3, "patience": 2, "arch": "shallow"}
        }"#,
    )
    .unwrap();
    let r = ok_json(pairnet(d, &["experiment", spec.to_str().unwrap()]));
    assert_eq!(r["cells"], 4);
    assert_eq!(r["failed_cells"], 0);
    assert!(d.join("tiny").join("results.csv").exists());
    assert!(d.join("tiny").join("summary.json").exists());
}
