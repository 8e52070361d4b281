use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tubeplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tubeplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCENARIO: &str = r#"
version = 1
name = "cli_test"
seed = 5

[model]
kind = "underwater"

[risk]
delta = 0.2
max_cycles = 100

[start]
kind = "fixed"
state = [0.0, 3.0]

[goal]
kind = "disc"
center = [2.0, 3.0]
radius = 0.1

[objective]
kind = "path-tracking"
path = [[0.0, 3.0], [3.0, 3.0]]

[planner]
stride = 2
cycle_cap = 60
"#;

const WALL: &str = r#"
[[obstacles]]
name = "a"
center = [0.45, 3.0]
half_width = { kind = "uniform", a = 0.3, b = 0.4 }

[[obstacles]]
name = "b"
center = [0.4, 3.4]
half_width = { kind = "uniform", a = 0.3, b = 0.4 }

[[obstacles]]
name = "c"
center = [0.4, 2.6]
half_width = { kind = "uniform", a = 0.3, b = 0.4 }
"#;

#[test]
fn build_primitives_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let out = tubeplan(&["build-primitives", "--model", "ground-vehicle", "-o", path(p)]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn run_reports_are_byte_identical_and_library_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib.json");
    assert!(tubeplan(&["build-primitives", "-o", path(&lib)]).status.success());
    let sc = dir.path().join("s.toml");
    fs::write(&sc, SCENARIO).unwrap();
    let mut reports = Vec::new();
    for (i, library) in [None, Some(&lib)].into_iter().enumerate() {
        let out_dir = dir.path().join(format!("out{i}"));
        let mut args = vec!["run", "--scenario", path(&sc), "--runs", "2", "--seed", "3", "-o", path(&out_dir)];
        if let Some(l) = library {
            args.extend(["--library", path(l)]);
        }
        let out = tubeplan(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(fs::read_to_string(out_dir.join("report.json")).unwrap());
        assert!(out_dir.join("runs/run_0001.jsonl").exists());
        assert!(out_dir.join("trajectories/run_0000.csv").exists());
    }
    assert_eq!(reports[0], reports[1]);
    let v: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
    assert_eq!(v["aggregate"]["success_rate"], 1.0);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");

    let wall = dir.path().join("wall.toml");
    fs::write(&wall, format!("{SCENARIO}{WALL}")).unwrap();
    let out = tubeplan(&["run", "--scenario", path(&wall), "--runs", "1", "-o", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));

    // M = 5 cycles cannot cover a ~10-cycle mission
    let tight = dir.path().join("tight.toml");
    fs::write(&tight, SCENARIO.replace("max_cycles = 100", "max_cycles = 5")).unwrap();
    let out = tubeplan(&["run", "--scenario", path(&tight), "--runs", "1", "-o", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));

    let out = tubeplan(&["run", "--risk", "0.05", "-o", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(4));
    let out = tubeplan(&["run", "--scenario", "no/such/file.toml", "-o", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(4));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, SCENARIO.replace("version = 1", "version = 9")).unwrap();
    let out = tubeplan(&["run", "--scenario", path(&bad), "-o", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn contour_dump_and_tube_check() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("c.json");
    let out = tubeplan(&["contour-dump", "--resolution", "60", "-o", path(&dump)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&dump).unwrap()).unwrap();
    assert_eq!(v["outer"].as_array().unwrap().len(), 10);
    assert!(!v["segments"].as_array().unwrap().is_empty());

    let checks = dir.path().join("t.json");
    let out = tubeplan(&["tube-check", "--samples", "5000", "-o", path(&checks)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&checks).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 5);
}

#[test]
fn compare_without_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    fs::write(&sc, SCENARIO).unwrap();
    let out_dir = dir.path().join("cmp");
    let out = tubeplan(&[
        "compare",
        "--scenario",
        path(&sc),
        "--runs",
        "1",
        "--no-baseline",
        "-o",
        path(&out_dir),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("compare.json")).unwrap()).unwrap();
    assert!(v["baseline"].is_null());
    assert_eq!(v["notes"].as_array().unwrap().len(), 4);
}
