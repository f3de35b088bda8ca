use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn floquet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floquet"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of an artifact CSV, without the run line and header.
fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

#[test]
fn verify_e1_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = floquet(dir.path(), &["--problem", "e1", "verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["summary"]["failed"].as_array().unwrap().len(), 0);
    assert!(m["artifacts"].as_array().unwrap().iter().any(|a| a == "verify.csv"));
}

#[test]
fn spectrum_e3_reports_one_chain_of_length_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = floquet(dir.path(), &["--problem", "e3", "spectrum"]);
    assert_eq!(code(&o), 0);
    let r = json(&dir.path().join("spectrum.json"));
    let eigs = r["eigenvalues"].as_array().unwrap();
    assert_eq!(eigs.len(), 1);
    assert!(eigs[0]["lambda"][0].as_f64().unwrap().abs() < 1e-12);
    assert!(eigs[0]["lambda"][1].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(eigs[0]["partial"], serde_json::json!([2]));
    assert_eq!(r["manifest"], "manifest.json");
}

#[test]
fn reduce_e5_fits_quadratic_coefficient() {
    let dir = tempfile::tempdir().unwrap();
    let o = floquet(dir.path(), &["--problem", "e5", "reduce", "--xi-max", "0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = json(&dir.path().join("diagnostics.json"));
    let fit = &d["fits"][0];
    assert_eq!(fit["component"], 1);
    let c = fit["coefficients"].as_array().unwrap();
    assert!((c[0].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert!((c[2].as_f64().unwrap() + 2.0).abs() < 0.2);
    assert_eq!(rows(&dir.path().join("h_samples.csv")).len(), 11);
}

#[test]
fn split_outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--problem", "e1", "split", "--unit-box", "-2:2:1", "--window", "-4:4"];
    assert_eq!(code(&floquet(a.path(), &args)), 0);
    assert_eq!(code(&floquet(b.path(), &args)), 0);
    for name in ["u.csv", "v.csv", "coefficients.csv", "estimate.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn project_of_a_p_path_has_no_q_part() {
    let dir = tempfile::tempdir().unwrap();
    let zero = dir.path().join("zero.csv");
    fs::write(&zero, "t,f0,f1\n0,0,0\n1,0,0\n").unwrap();
    let args = [
        "--problem",
        "e4",
        "split",
        "--forcing",
        zero.to_str().unwrap(),
        "--window",
        "0:2",
        "--xi",
        "1,0.5",
    ];
    let o = floquet(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let proj = dir.path().join("proj");
    let u = dir.path().join("u.csv");
    let o = floquet(&proj, &["--problem", "e4", "project", "--input", u.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = rows(&proj.join("v_part.csv"));
    let worst = v.iter().flat_map(|r| r[1..].iter()).fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&floquet(dir.path(), &["--problem", "no_such_problem", "spectrum"])), 2);
    let bad = dir.path().join("bad.floq");
    fs::write(&bad, "[space]\ndim = 2\n[operator]\nA = [[1]]\n").unwrap();
    assert_eq!(code(&floquet(dir.path(), &["--problem", bad.to_str().unwrap(), "spectrum"])), 2);
    let complex = dir.path().join("complex.floq");
    fs::write(
        &complex,
        "[space]\ndim = 1\n[operator]\nA = [[1 + i]]\n[strip]\nbeta1 = -2\nbeta2 = 2\n[flags]\nreal = false\n",
    )
    .unwrap();
    assert_eq!(code(&floquet(dir.path(), &["--problem", complex.to_str().unwrap(), "realform"])), 2);
    assert_eq!(code(&floquet(dir.path(), &["--problem", "e1", "--tol-proj", "1e-30", "verify"])), 4);
    assert_eq!(code(&floquet(dir.path(), &["--problem", "e1", "reduce"])), 2);
}
