use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sosexit_cli::problem::{load, load_str, LoadOptions, ProblemFile};

fn problems() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosexit"))
        .args(args)
        .env("SOSEXIT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn scalar() -> String {
    problems().join("scalar.json").display().to_string()
}

#[test]
fn solve_json_is_reproducible_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let mut docs = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = dir.path().join(name);
        let o = run(&["solve", &scalar(), "--degrees", "2,4,6", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        docs.push(serde_json::to_string(&v).unwrap());
    }
    assert_eq!(docs[0], docs[1]);
    let v: Value = serde_json::from_str(&docs[0]).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let lower = rows[0]["lower"]["bound"].as_f64().unwrap();
    assert!((lower - 0.65).abs() < 1e-5, "{lower}");
    assert_eq!(v["problem"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn solve_csv_has_one_line_per_degree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b.csv");
    let o = run(&["solve", &scalar(), "--degrees", "2,4", "--sense", "min", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("r,lower,upper"));
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[0], "2");
    assert!((fields[1].parse::<f64>().unwrap() - 0.65).abs() < 1e-6);
    assert_eq!(fields[4], "optimal");
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"dimension\": 1, ").unwrap();
    let o = run(&["solve", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));

    let missing = run(&["info", "/nonexistent/problem.json", "-r", "2"]);
    assert_eq!(missing.status.code(), Some(2));

    // no ball constraint: rejected, and accepted once --add-ball supplies one
    let text = std::fs::read_to_string(problems().join("unit_ball.json")).unwrap();
    let mut file: Value = serde_json::from_str(&text).unwrap();
    file["domain"]["interior"] = serde_json::json!(["1 - x1^4 - x2^4 >= 0"]);
    file["domain"]["boundary"][0]["eq"] = serde_json::json!(["1 - x1^4 - x2^4 = 0"]);
    let noball = dir.path().join("noball.json");
    std::fs::write(&noball, serde_json::to_string(&file).unwrap()).unwrap();
    let o = run(&["info", noball.to_str().unwrap(), "-r", "4"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--add-ball"));
    let o = run(&["info", noball.to_str().unwrap(), "-r", "4", "--add-ball", "1.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn info_reports_relaxation_sizes() {
    let path = problems().join("quartic_ball.json");
    let o = run(&["info", path.to_str().unwrap(), "-r", "8", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["alternative_moment_count"].as_u64(), Some(73));
    assert_eq!(v["dimension"].as_u64(), Some(2));
}

#[test]
fn certify_and_export_scalar() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    let o = run(&["certify", &scalar(), "-r", "4", "--sense", "min", "--samples", "2000", "--out", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert_eq!(v["report"]["pass"], Value::Bool(true));

    let sdpa = dir.path().join("scalar4.dat-s");
    let o = run(&["export", &scalar(), "-r", "4", "--sense", "min", sdpa.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read(&sdpa).unwrap();
    let prog = sosexit_sdp::sdpa::read_sdpa(&text[..]).unwrap();
    let sol = sosexit_sdp::solve(&prog, &sosexit_sdp::SolverSettings::default());
    assert!(sol.status.is_usable());
}

#[test]
fn mc_runs_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc.json");
    let o = run(&["mc", &scalar(), "--paths", "2000", "--step", "1e-3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let mean = v["estimate"]["mean"].as_f64().unwrap();
    assert!((mean - 1.0).abs() < 1e-9, "{mean}");
}

#[test]
fn bundled_problems_round_trip() {
    for name in ["scalar", "unit_ball", "quartic_ball", "quartic_ball_3d"] {
        let loaded = load(&problems().join(format!("{name}.json")), &LoadOptions::default()).unwrap();
        let text = ProblemFile::from_problem(&loaded.problem).to_json();
        let again = load_str(&text, &LoadOptions::default()).unwrap();
        assert_eq!(loaded.problem, again.problem, "{name}");
    }
}
