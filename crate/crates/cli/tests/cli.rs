use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn hpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpc")).args(args).current_dir(root()).env_remove("HPC_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn ball_run_ends_in_zeno_abort() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("ball.jsonl");
    let o = hpc(&["models", "run", "ball", "--horizon", "12", "--out-trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.lines().last().unwrap().contains("\"zeno_abort\""));
}

#[test]
fn approx_spec_against_system() {
    let o = hpc(&["approx", "models/spec.hpc", "models/system.hpc", "--eps", "400", "--delta", "0", "--observe", "x", "--horizon", "320", "--step", "0.01"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("max distance"));
    let tight = hpc(&["approx", "models/spec.hpc", "models/system.hpc", "--eps", "100", "--observe", "x", "--horizon", "320", "--step", "0.01"]);
    assert_eq!(code(&tight), 1);
}

#[test]
fn approx_reads_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(&dir, "sc.json", r#"{"input": "u", "scenarios": [{"label": "push", "constant": 0.1}, {"label": "steps", "pieces": [[10, -0.1], [10, 0.1]]}]}"#);
    let out = dir.path().join("verdict.json");
    let o = hpc(&[
        "approx", "models/spec.hpc:SPEC", "models/system.hpc:System", "--eps", "400", "--observe", "x",
        "--horizon", "320", "--step", "0.01", "--scenarios", &sc, "--jobs", "2", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["scenarios"].as_array().unwrap().len(), 2);
    let bad = write(&dir, "bad.json", r#"{"scenarios": [{"label": "x", "constant": 1}]}"#);
    assert_eq!(code(&hpc(&["approx", "models/spec.hpc", "models/system.hpc", "--eps", "1", "--scenarios", &bad])), 2);
}

#[test]
fn bisim_modes_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(&dir, "a.hpc", "run a!<1> . 0 || 0;\n");
    let b = write(&dir, "b.hpc", "run a!<1> . 0;\n");
    let c = write(&dir, "c.hpc", "run tau . a!<1> . 0;\n");
    assert_eq!(code(&hpc(&["bisim", &a, &b, "--mode", "strong"])), 0);
    assert_eq!(code(&hpc(&["bisim", &c, &b, "--mode", "strong"])), 1);
    assert_eq!(code(&hpc(&["bisim", &c, &b, "--mode", "weak"])), 0);
}

#[test]
fn usage_and_model_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(&dir, "bad.hpc", "run a!<1 . 0;\n");
    assert_eq!(code(&hpc(&["parse", &bad])), 3);
    assert_eq!(code(&hpc(&["parse", "no/such/file.hpc"])), 2);
    assert_eq!(code(&hpc(&["frobnicate"])), 2);
    assert_eq!(code(&hpc(&["models", "show", "nope"])), 2);
    let open = write(&dir, "open.hpc", "run {0 | x' = y};\n");
    assert_eq!(code(&hpc(&["simulate", &open])), 3);
}

#[test]
fn parse_selects_definitions() {
    let o = hpc(&["parse", "models/wait.hpc"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("c < 3"));
    let o = hpc(&["parse", "models/spec.hpc:SPEC_FAILED"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("5000"));
}

#[test]
fn simulate_writes_identical_artifacts_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<(String, String)> = (0..2)
        .map(|i| {
            let t = dir.path().join(format!("t{i}.jsonl"));
            let c = dir.path().join(format!("t{i}.csv"));
            let o = hpc(&[
                "simulate", "models/vehicle.hpc", "--horizon", "20", "--policy", "random", "--seed", "7", "--observe-all",
                "--out-trace", t.to_str().unwrap(), "--out-traj", c.to_str().unwrap(),
            ]);
            assert_eq!(code(&o), 0);
            (std::fs::read_to_string(t).unwrap(), std::fs::read_to_string(c).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert!(runs[0].1.starts_with("time,"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: Option<&str>, name: &str| {
        let t = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hpc"));
        cmd.args(["simulate", "models/vehicle.hpc", "--horizon", "20", "--policy", "random", "--out-trace", t.to_str().unwrap()]);
        cmd.current_dir(root()).env_remove("HPC_SEED");
        if let Some(s) = seed {
            cmd.env("HPC_SEED", s);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read_to_string(t).unwrap()
    };
    let explicit = {
        let t = dir.path().join("explicit.jsonl");
        hpc(&["simulate", "models/vehicle.hpc", "--horizon", "20", "--policy", "random", "--seed", "7", "--out-trace", t.to_str().unwrap()]);
        std::fs::read_to_string(t).unwrap()
    };
    assert_eq!(run(Some("7"), "env.jsonl"), explicit);
}

#[test]
fn lts_and_discretize_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(&dir, "c.hpc", "run tau . a!<1> . 0;\n");
    let out = dir.path().join("lts.json");
    assert_eq!(code(&hpc(&["lts", &c, "--out", out.to_str().unwrap()])), 0);
    let l: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(l["edges"].as_array().unwrap().len(), 2);

    let e = write(&dir, "e.hpc", "run {1 | v' = v};\n");
    let d = dir.path().join("d.hpc");
    let o = hpc(&["discretize", &e, "--eps", "1e-3", "--duration", "1", "--step", "0.1", "--out", d.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let t = dir.path().join("d.jsonl");
    let o = hpc(&["simulate", d.to_str().unwrap(), "--horizon", "2", "--out-trace", t.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("Inaction"));
    let last_rk = std::fs::read_to_string(t)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"chan\":\"rk\""))
        .last()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .unwrap();
    assert!((last_rk["values"][0].as_f64().unwrap() - 1f64.exp()).abs() < 1e-5);
}

#[test]
fn certcheck_reports_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = hpc(&[
        "certcheck", "models/composed_automaton_h.json", "models/barrier_certificate_h.json", "--samples", "2000",
        "--out", out.to_str().unwrap(),
    ]);
    // the reconstructed clock resets break BC-3 on the reference edges
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("witness"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(r["violations"].as_u64().unwrap() > 0);
    assert_eq!(code(&hpc(&["certcheck", "models/composed_automaton_h.json"])), 2);
}

#[test]
fn models_list_show_export() {
    let o = hpc(&["models", "list"]);
    assert_eq!(code(&o), 0);
    for id in ["bigben", "wait", "ball", "vehicle", "handover-network", "spec-system", "spec-system-failed", "composed-automaton-H"] {
        assert!(stdout(&o).contains(id), "{id}");
    }
    let o = hpc(&["models", "show", "ball"]);
    assert!(stdout(&o).contains("5 m"));
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&hpc(&["models", "export", "spec-system", dir.path().to_str().unwrap()])), 0);
    assert!(dir.path().join("system.hpc").exists() && dir.path().join("spec.hpc").exists());
}

#[test]
fn help_documents_units() {
    let o = hpc(&["--help"]);
    assert!(stdout(&o).contains("SI units"));
    let o = hpc(&["simulate", "--help"]);
    assert!(stdout(&o).contains("(s)"));
}
