use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjsaddle")).args(args).output().unwrap()
}

fn run_config(command: &str, config: &Path, out: &Path) -> Output {
    run(&[command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn example(name: &str) -> PathBuf {
    configs_dir().join(format!("{name}.json"))
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr_error(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().unwrap_or_else(|| panic!("empty stderr"));
    serde_json::from_str(line).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn example_configs() -> Vec<(String, PathBuf)> {
    let mut v: Vec<_> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| {
            let cfg: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
            (cfg["task"]["command"].as_str().unwrap().to_string(), p)
        })
        .collect();
    v.sort();
    v
}

#[test]
fn every_example_config_runs() {
    let out = tempfile::tempdir().unwrap();
    let configs = example_configs();
    assert!(configs.len() >= 10);
    for (command, path) in configs {
        let o = run_config(&command, &path, &out.path().join(&command));
        assert_eq!(o.status.code(), Some(0), "{command}: {}", String::from_utf8_lossy(&o.stderr));
        let summary = stdout_json(&o);
        assert_eq!(summary["command"], command.as_str());
        for a in summary["artifacts"].as_array().unwrap() {
            assert!(Path::new(a.as_str().unwrap()).exists(), "{a}");
        }
    }
}

#[test]
fn example_configs_satisfy_the_schema() {
    let o = run(&["schema"]);
    assert_eq!(o.status.code(), Some(0));
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    for (command, path) in example_configs() {
        let cfg: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&cfg).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{command}: {errors:?}");
    }
    let bad = json!({ "task": { "command": "linearize", "hamiltonian": { "kind": "model_quadratic", "a": 1.0, "b": 2.0 } }, "extra": 1 });
    assert!(!validator.is_valid(&bad));
}

#[test]
fn series_example_has_one_sixth() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("series", &example("series"), out.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.path().join("series_series.csv")).unwrap();
    let z30: f64 = csv.lines().find_map(|l| l.strip_prefix("3,0,")).unwrap().parse().unwrap();
    assert!((z30 - 1.0 / 6.0).abs() < 1e-12);
    assert!(stdout_json(&o)["summary"]["residual"].as_f64().unwrap() < 1e-9);
}

#[test]
fn resonance_example_lists_diagonal_resonances() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("resonance", &example("resonance"), out.path());
    assert_eq!(o.status.code(), Some(0));
    let s = stdout_json(&o);
    assert_eq!(s["summary"]["resonances"], json!([[2, 2], [3, 3]]));
    assert_eq!(s["summary"]["report"]["non_existence"], true);
    assert!((s["summary"]["report"]["entries"][0]["obstruction"].as_f64().unwrap() - 0.1).abs() < 1e-10);
}

#[test]
fn manifold_example_has_small_residual() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("manifold", &example("manifold"), out.path());
    assert_eq!(o.status.code(), Some(0));
    let s = stdout_json(&o);
    assert!(s["summary"]["max_abs_h"].as_f64().unwrap() < 1e-7);
    assert_eq!(s["summary"]["defect"]["lagrangian"], true);
}

#[test]
fn same_seed_gives_identical_files() {
    let out = tempfile::tempdir().unwrap();
    let (a, b) = (out.path().join("a"), out.path().join("b"));
    for dir in [&a, &b] {
        let o = run_config("flow-surface", &example("flow_surface"), dir);
        assert_eq!(o.status.code(), Some(0));
    }
    let mut compared = 0;
    for e in std::fs::read_dir(&a).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name:?}");
        compared += 1;
    }
    assert!(compared >= 3);
}

#[test]
fn seed_changes_the_property_sweep() {
    let out = tempfile::tempdir().unwrap();
    let cfg = example("flow_surface");
    let summary = |seed: &str, dir: &str| {
        let d = out.path().join(dir);
        let o = run(&["flow-surface", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
        stdout_json(&o)["summary"]["flow_properties"].clone()
    };
    assert_ne!(summary("1", "a"), summary("2", "b"));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "task": { "command": "linearize", "hamiltonian": { "kind": "model_quadratic", "a": 1.0, "b": 2.0, "typo": 3 } }
    });
    let o = run_config("linearize", &write_config(dir.path(), &cfg), dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_error(&o);
    assert_eq!(e["error"]["exit_code"], 2);
    assert!(e["error"]["message"].as_str().unwrap().contains("typo"));
}

#[test]
fn invalid_parameters_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "task": { "command": "linearize", "hamiltonian": { "kind": "model_quadratic", "a": -1.0, "b": 2.0 } } });
    let o = run_config("linearize", &write_config(dir.path(), &cfg), dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["exit_code"], 2);

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["error"]["kind"], "usage");

    let o = run_config("series", &example("resonance"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "task": { "command": "classify", "hamiltonian": { "kind": "model_quadratic", "a": 1.0, "b": 1.0 } } });
    let o = run_config("classify", &write_config(dir.path(), &cfg), dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let e = stderr_error(&o);
    assert_eq!(e["error"]["exit_code"], 3);
}

#[test]
fn clipped_pixels_warn_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("img.csv"), "0.5,1.2\n1.0,0.25\n").unwrap();
    let cfg = json!({ "task": { "command": "sfs-ingest", "input": "img.csv" } });
    let o = run_config("sfs-ingest", &write_config(dir.path(), &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(0));
    let warn: Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).lines().next().unwrap()).unwrap();
    assert!(warn["warning"].as_str().unwrap().contains("clipped"));

    std::fs::write(dir.path().join("img.csv"), "0.5,0\n").unwrap();
    let o = run_config("sfs-ingest", &write_config(dir.path(), &cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_error(&o)["error"]["message"].as_str().unwrap().contains("row 0, col 1"));
}
