use std::path::Path;
use std::process::{Command, Output};

const CUBE: &str = r#"
points = 6000
noise = 0.005

[[shapes]]
kind = "cube"
side = 2.0
center = [0.0, 0.0, 0.0]
"#;

fn cadinspect(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadinspect"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn synth_cube(dir: &Path) {
    std::fs::write(dir.join("cube.toml"), CUBE).unwrap();
    let out = cadinspect(&["synth", "cube.toml", "--out", "scene", "--seed", "3"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["scan.ply", "part.obj", "truth.toml"] {
        assert!(dir.join("scene").join(f).exists(), "{f}");
    }
}

#[test]
fn synth_then_assess_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    synth_cube(dir.path());
    let out = cadinspect(
        &["assess", "scene/scan.ply", "scene/part.obj", "--out", "result", "--dump-edges", "--dump-segments"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = dir.path().join("result").join("report.toml");
    let parsed = cadinspect::report::parse_report(&report).unwrap();
    assert!(parsed.e_global < 0.02, "{}", parsed.e_global);
    assert!(dir.path().join("result/edges.ply").exists());
    assert!(dir.path().join("result/segments.ply").exists());
    assert!(!String::from_utf8_lossy(&out.stdout).is_empty());

    // circles fitted to the dumped edges: a cube has none
    let fit = cadinspect(&["fit-circles", "result/edges.ply", "--out", "rings.ply"], dir.path());
    assert_eq!(fit.status.code(), Some(0), "{}", String::from_utf8_lossy(&fit.stderr));
    let table = String::from_utf8_lossy(&fit.stdout);
    assert_eq!(table.lines().count(), 1, "{table}");
    assert!(dir.path().join("rings.ply").exists());
}

#[test]
fn missing_mesh_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    synth_cube(dir.path());
    let out = cadinspect(&["assess", "scene/scan.ply", "scene/absent.obj", "--out", "result"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.obj"));
    assert!(!dir.path().join("result").exists());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    synth_cube(dir.path());
    std::fs::write(dir.path().join("bad.toml"), "weight_fidelity = 0.9\n").unwrap();
    let out = cadinspect(&["assess", "scene/scan.ply", "scene/part.obj", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("typo.toml"), "epsilonn = 0.1\n").unwrap();
    let out = cadinspect(&["fit-circles", "scene/scan.ply", "--config", "typo.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    synth_cube(dir.path());
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let out = cadinspect(&["assess", "scene/scan.ply", "scene/part.obj", "--out", "blocker/result"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("output"));
}
