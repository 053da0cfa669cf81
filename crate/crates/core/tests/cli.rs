use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn varpx(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varpx"))
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .env("VARPX_THREADS", "2")
        .output()
        .unwrap()
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_certifies_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpx(&["solve", &fixture("trivial.json")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("certified"));
    for f in ["fields.csv", "certificate.json", "trace.json"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("fields.csv")).unwrap();
    assert!(csv.starts_with("x,"));
    assert_eq!(csv.lines().count(), 1 + 129);
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["all_pass"], true);
    assert_eq!(cert["mesh"]["n"], 128);
}

#[test]
fn mesh_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpx(&["--mesh-n", "32", "solve", &fixture("trivial.json")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["mesh"]["n"], 32);
}

#[test]
fn invalid_configs_exit_one_without_artifacts() {
    let bad = fixtures().join("invalid");
    let mut names: Vec<_> = std::fs::read_dir(&bad).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for path in names {
        let dir = tempfile::tempdir().unwrap();
        let o = varpx(&["solve", path.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(1), "{}: {}", path.display(), stderr(&o));
        assert!(stderr(&o).starts_with("error: "), "{}", stderr(&o));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0, "{}", path.display());
    }
}

#[test]
fn error_messages_name_the_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpx(&["solve", &fixture("invalid/unknown_key.json")], dir.path());
    assert!(stderr(&o).contains("solver.tolerance"), "{}", stderr(&o));
    let o = varpx(&["solve", &fixture("invalid/gamma_at_cap.json")], dir.path());
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
    let o = varpx(&["solve", "/nonexistent/config.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn uncertified_run_exits_two_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpx(&["--mesh-n", "64", "solve", &fixture("variable_p.json")], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert!(trace["error"].as_str().is_some_and(|e| !e.is_empty()));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpx(
        &[
            "sweep",
            &fixture("trivial.json"),
            "--param",
            "resolution",
            "--values",
            "32,64,8",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("value,converged"));
    assert!(lines[1].starts_with("32,true"));
    // the invalid value fails alone
    assert!(lines[3].starts_with("8,false"), "{}", lines[3]);
    assert!(lines[3].contains(",1,"), "{}", lines[3]);
}

#[test]
fn audit_prints_a_single_section() {
    let dir = tempfile::tempdir().unwrap();
    let o = varpx(&["audit", &fixture("trivial.json"), "--only", "residuals"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["max"].as_f64().unwrap() <= 1e-10);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    let o = varpx(
        &[
            "audit",
            &fixture("trivial.json"),
            "--only",
            "invariance",
            "--samples",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"], 10);

    let o = varpx(&["audit", &fixture("trivial.json"), "--only", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("residuals"));
}
