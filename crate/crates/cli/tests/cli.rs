use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sfbubble(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfbubble")).current_dir(dir).args(args).output().expect("run sfbubble")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn square_csv(dir: &Path) -> String {
    let path = dir.join("sq.csv");
    std::fs::write(&path, "x,y\n1,1\n-1,1\n-1,-1\n1,-1\n").unwrap();
    format!("polygon:{}", path.display())
}

#[test]
fn bubble_build_and_measure() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfbubble(dir.path(), &["bubble", "build", "--norm", "ellp:3", "--n-t", "128", "--n-tau", "64", "--out", "mesh.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mesh = read(&dir.path().join("mesh.json"));
    assert_eq!(mesh["pass"], Value::Bool(true));
    assert_eq!(mesh["meta"]["tool"], "sfbubble");
    assert_eq!(mesh["meta"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(mesh["meta"]["seed"], 7);
    assert!(mesh["meta"]["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(mesh["meta"]["config"]["bubble"]["build"]["norm"], "ellp:3");
    assert_eq!(mesh["points"].as_array().unwrap().len(), 3 * 129 * 64);
    assert_eq!(mesh["norm"]["kind"], "ellp");

    let out = sfbubble(dir.path(), &["bubble", "measure", "--in", "mesh.json"]);
    assert_eq!(code(&out), 0);
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    let (v, p, q) = (m["volume"].as_f64().unwrap(), m["perimeter"].as_f64().unwrap(), m["quotient"].as_f64().unwrap());
    assert!(v > 0.0 && p > 0.0);
    assert!((q - p / v.powf(0.75)).abs() < 1e-12 * q);
}

#[test]
fn non_norm_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfbubble(dir.path(), &["bubble", "build", "--norm", "ellp:0.5"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 < p"));
    assert!(!dir.path().join("mesh.json").exists());
    assert_eq!(code(&sfbubble(dir.path(), &["bubble", "frobnicate"])), 1);
    assert_eq!(code(&sfbubble(dir.path(), &["charcurve", "--norm", "euclidean", "--hsbar", "1.5M"])), 1);
    assert_eq!(code(&sfbubble(dir.path(), &["foliate", "--norm", "euclidean", "--tol", "0"])), 1);
    assert_eq!(code(&sfbubble(dir.path(), &["bubble", "measure", "--in", "missing.json"])), 1);
    assert_eq!(code(&sfbubble(dir.path(), &["--help"])), 0);
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // The curvature spread on a 65² grid is far above 1e-9.
    let out = sfbubble(dir.path(), &["foliate", "--norm", "euclidean", "--grid", "65", "--seeds", "4", "--tol", "1e-9", "--report", "r.json"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    let rep = read(&dir.path().join("r.json"));
    assert_eq!(rep["pass"], Value::Bool(false));
}

#[test]
fn reproducible_artifacts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| vec!["--reproducible", "--seed", "11", "foliate", "--norm", "ellp:3", "--grid", "257", "--seeds", "6", "--report", out];
    assert_eq!(code(&sfbubble(dir.path(), &args("a.json"))), 0);
    assert_eq!(code(&sfbubble(dir.path(), &args("b.json"))), 0);
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    // The config echo names the output file; everything else must match.
    let a = String::from_utf8(a).unwrap().replace("a.json", "X");
    let b = String::from_utf8(b).unwrap().replace("b.json", "X");
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    assert!(v["meta"]["wall_time_s"].is_null());
    assert_eq!(v["meta"]["seed"], 11);
    // Floats carry 17 significant digits.
    assert!(a.contains("e-") || a.contains("e0"));
    let mean = v["curvature"]["mean"].as_f64().unwrap();
    assert!(a.contains(&format!("{mean:.16e}")));
}

#[test]
fn json_flag_prints_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfbubble(dir.path(), &["--json", "charcurve", "--norm", "ellipse:1,0.5", "--hsbar", "0.25M", "--out", "s.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let printed: Value = serde_json::from_slice(&out.stdout).unwrap();
    let written = read(&dir.path().join("s.json"));
    assert_eq!(printed["diagnostics"], written["diagnostics"]);
    assert!(written["diagnostics"]["closure"].as_f64().unwrap() < 1e-5);
    assert_eq!(written["diagnostics"]["simple"], Value::Bool(true));
}

#[test]
fn geodesic_writes_csv_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfbubble(dir.path(), &["geodesic", "--psi", "dagger:ellipse:1,0.5", "--lz", "-2", "--T", "6", "--samples", "301", "--out", "c.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = std::fs::read_to_string(dir.path().join("c.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# sfbubble "));
    assert!(lines.next().unwrap().starts_with("# config {"));
    assert_eq!(lines.next().unwrap(), "# seed 7");
    assert!(lines.next().unwrap().starts_with("# wall_time_s "));
    assert_eq!(lines.next().unwrap(), "t,x,y,z");
    assert_eq!(lines.count(), 301);
    // Crystalline control norms have no normal extremals here.
    assert_eq!(code(&sfbubble(dir.path(), &["geodesic", "--psi", "linf"])), 1);
}

#[test]
fn polecheck_and_crystal_faces() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfbubble(dir.path(), &["polecheck", "--norm", "ellipse:1,0.5", "--out", "f.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let fits = read(&dir.path().join("f.json"));
    let ratio = fits["fits"]["mixed_to_gradient_ratio"].as_f64().unwrap();
    assert!((ratio - 2.0).abs() < 0.1);
    assert_eq!(code(&sfbubble(dir.path(), &["polecheck", "--norm", "ellp:3"])), 1);

    let sq = square_csv(dir.path());
    let out = sfbubble(dir.path(), &["crystal", "faces", "--norm", &sq, "--out", "faces.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let faces = read(&dir.path().join("faces.json"));
    assert_eq!(faces["faces"].as_array().unwrap().len(), 2);
    assert_eq!(faces["dual"]["vertices"].as_array().unwrap().len(), 4);
    assert_eq!(code(&sfbubble(dir.path(), &["crystal", "faces", "--norm", "euclidean"])), 1);
}

#[test]
fn saved_patch_round_trips_through_foliate() {
    let dir = tempfile::tempdir().unwrap();
    let a = sfbubble(dir.path(), &["--reproducible", "foliate", "--norm", "euclidean", "--grid", "129", "--seeds", "4", "--save-patch", "p.json", "--report", "a.json"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stdout));
    let b = sfbubble(dir.path(), &["--reproducible", "foliate", "--norm", "euclidean", "--patch", "p.json", "--seeds", "4", "--report", "b.json"]);
    assert_eq!(code(&b), 0, "{}", String::from_utf8_lossy(&b.stdout));
    let (ra, rb) = (read(&dir.path().join("a.json")), read(&dir.path().join("b.json")));
    assert_eq!(ra["curvature"], rb["curvature"]);
    assert_eq!(ra["foliation"]["max_radius_deviation"], rb["foliation"]["max_radius_deviation"]);
}

#[test]
fn mollify_study_reports_conditional() {
    let dir = tempfile::tempdir().unwrap();
    let sq = square_csv(dir.path());
    let out = sfbubble(dir.path(), &["mollify-study", "--norm", &sq, "--ladder", "0.2,0.1", "--n-t", "128", "--n-tau", "64", "--samples", "2000", "--out", "m.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let rep = read(&dir.path().join("m.json"));
    assert_eq!(rep["study"]["conclusion"], "conditional");
    assert_eq!(rep["study"]["entries"].as_array().unwrap().len(), 2);
    assert_eq!(code(&sfbubble(dir.path(), &["mollify-study", "--norm", &sq, "--ladder", "0.1,0.2"])), 1);
}

#[test]
fn verify_all_euclidean() {
    let dir = tempfile::tempdir().unwrap();
    let out = sfbubble(dir.path(), &["verify", "all", "--norm", "euclidean", "--out", "v.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let rep = read(&dir.path().join("v.json"));
    assert_eq!(rep["pass"], Value::Bool(true));
    let suites = rep["suites"].as_object().unwrap();
    assert_eq!(suites["crystalline"]["status"], "skipped");
    for name in ["algebra", "duality", "bubble", "foliation", "criticality", "geodesics", "characteristic", "pole"] {
        assert_eq!(suites[name]["status"], "pass", "{name}");
    }
}
