//! Golden traces for the zoo. Set HPC_UPDATE_FIXTURES=1 to rewrite them.

use std::path::PathBuf;

use hpc_core::sim::simulate;
use hpc_core::zoo::{list_models, load_process_model};
use serde_json::Value;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn render(id: &str, file: &str) -> String {
    let m = load_process_model(id).unwrap();
    let r = simulate(&m.main, &m.entry.sim_config()).unwrap();
    if file.ends_with(".csv") {
        r.trajectory.to_csv()
    } else {
        r.trace.to_jsonl()
    }
}

fn close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs()))
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| close(a, b)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| close(v, w)))
        }
        _ => a == b,
    }
}

fn same_line(file: &str, a: &str, b: &str) -> bool {
    if file.ends_with(".csv") {
        let (xs, ys): (Vec<_>, Vec<_>) = (a.split(',').collect(), b.split(',').collect());
        xs.len() == ys.len()
            && xs.iter().zip(&ys).all(|(x, y)| match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())),
                _ => x == y,
            })
    } else {
        let (x, y): (Value, Value) = (serde_json::from_str(a).unwrap(), serde_json::from_str(b).unwrap());
        close(&x, &y)
    }
}

#[test]
fn fixtures_match_simulation() {
    let update = std::env::var("HPC_UPDATE_FIXTURES").is_ok_and(|v| v == "1");
    let dir = fixture_dir();
    let mut checked = 0;
    for e in list_models() {
        for file in e.fixtures {
            let path = dir.join(file);
            let fresh = render(e.id, file);
            if update {
                std::fs::write(&path, &fresh).unwrap();
                continue;
            }
            let golden = std::fs::read_to_string(&path)
                .unwrap_or_else(|err| panic!("{}: {err}; run with HPC_UPDATE_FIXTURES=1", path.display()));
            let (g, f): (Vec<_>, Vec<_>) = (golden.lines().collect(), fresh.lines().collect());
            assert_eq!(g.len(), f.len(), "{file}: line count");
            for (i, (a, b)) in g.iter().zip(&f).enumerate() {
                assert!(same_line(file, a, b), "{file}:{}: expected\n{a}\ngot\n{b}", i + 1);
            }
            checked += 1;
        }
    }
    assert!(update || checked >= 7);
}

#[test]
fn exp_growth_fixture_stops_at_ln5() {
    let text = std::fs::read_to_string(fixture_dir().join("exp-growth.trace.jsonl")).unwrap();
    let stop: Value = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["kind"] == "stop")
        .unwrap();
    assert!((stop["time"].as_f64().unwrap() - 5f64.ln()).abs() < 1e-6);
}
