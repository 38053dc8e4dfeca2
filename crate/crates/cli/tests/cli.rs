use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const SCHEMA: &str = r#"{"version":1,"attributes":[
  {"name":"sex","cardinality":2,"categories":["Female","Male"]},
  {"name":"age","cardinality":3,"bins":[0,30,60,120]},
  {"name":"job","cardinality":3,"categories":["a","b","?"],"missing":2}
]}"#;

fn pmwpub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmwpub"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes the schema and a 300-row raw CSV; returns the directory.
fn toy_data(dir: &Path) {
    fs::write(dir.join("schema.json"), SCHEMA).unwrap();
    let mut csv = String::from("sex,age,job\n");
    for i in 0..300 {
        let sex = if i % 3 == 0 { "Female" } else { "Male" };
        let age = [12, 45, 90][(i * 7) % 3];
        let job = ["a", "b", "?"][(i / 2) % 3];
        csv.push_str(&format!("{sex},{age},{job}\n"));
    }
    fs::write(dir.join("data.csv"), csv).unwrap();
}

fn write_config(dir: &Path, name: &str, cfg: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn base_config() -> Value {
    json!({
        "data": {"path": "data.csv", "schema": "schema.json"},
        "split": {"bias": {"attribute": "sex", "value": "Female", "delta": 0.1}},
        "queries": {"k": 2, "workloads": 3, "seed": 0},
        "algorithm": "pmwpub",
        "epsilons": [1.0],
        "T": [5],
        "repeats": 1,
        "seed": 3
    })
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn strip_timing(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn epsilon_grid_writes_thirty_runs_and_one_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let mut cfg = base_config();
    cfg["epsilons"] = json!([0.1, 0.15, 0.2, 0.25, 0.5, 1]);
    cfg["repeats"] = json!(5);
    let path = write_config(dir.path(), "exp.json", cfg);
    let out = dir.path().join("out");
    let o = pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--jobs", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let runs: Vec<PathBuf> = fs::read_dir(out.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 30);
    let aggregates: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert_eq!(aggregates, vec!["aggregate.csv".to_string()]);

    // recompute mean and std error of the max error from the run files
    let mut per_eps: Vec<Vec<f64>> = vec![Vec::new(); 6];
    for run in &runs {
        let v: Value = serde_json::from_str(&fs::read_to_string(run).unwrap()).unwrap();
        assert!(v["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
        assert_eq!(v["config"]["repeats"], json!(5));
        assert!(v["timing"]["elapsed_seconds"].as_f64().unwrap() >= 0.0);
        let ei = v["cell"]["epsilon_index"].as_u64().unwrap() as usize;
        per_eps[ei].push(v["report"]["metrics"]["max"].as_f64().unwrap());
    }
    let rows = read_csv(&out.join("aggregate.csv"));
    assert_eq!(rows.len(), 18);
    let eps = [0.1, 0.15, 0.2, 0.25, 0.5, 1.0];
    for (i, vals) in per_eps.iter().enumerate() {
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let row = rows.iter().find(|r| r[0].parse::<f64>().unwrap() == eps[i] && r[1] == "max").unwrap();
        assert!((row[2].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((row[3].parse::<f64>().unwrap() - sd / n.sqrt()).abs() < 1e-12);
    }

    // the aggregate is rebuildable from the run files alone
    let before = fs::read(out.join("aggregate.csv")).unwrap();
    fs::remove_file(out.join("aggregate.csv")).unwrap();
    let o = pmwpub(&["aggregate", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("aggregate.csv")).unwrap(), before);

    let trace = read_csv(&out.join("traces/T5_eps0_rep0.csv"));
    assert_eq!(trace.len(), 5);
}

#[test]
fn fixed_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let path = write_config(dir.path(), "exp.json", base_config());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success());
        out
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(fs::read(a.join("aggregate.csv")).unwrap(), fs::read(b.join("aggregate.csv")).unwrap());
    let load = |d: &Path| -> Value {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(d.join("runs/T5_eps0_rep0.json")).unwrap()).unwrap();
        v["config"].as_object_mut().unwrap().remove("out_dir");
        strip_timing(v)
    };
    assert_eq!(load(&a), load(&b));

    let c = dir.path().join("c");
    let o = pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", c.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success());
    assert_ne!(load(&a), load(&c));
}

#[test]
fn toml_config_and_t_sweep() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let toml_text = r#"
algorithm = "mwem"
epsilons = [0.5, 1.0]
T = [3, 6]
repeats = 2
write_traces = false

[data]
path = "data.csv"
schema = "schema.json"

[queries]
k = 1
workloads = 3
"#;
    let path = dir.path().join("exp.toml");
    fs::write(&path, toml_text).unwrap();
    let out = dir.path().join("out");
    let o = pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_dir(out.join("runs")).unwrap().count(), 8);
    assert!(out.join("aggregate_T3.csv").exists() && out.join("aggregate_T6.csv").exists());
    assert!(!out.join("traces").exists());
}

fn first_number(line: &str) -> f64 {
    line.split_whitespace()
        .find_map(|w| w.trim_end_matches([',', ';']).parse::<f64>().ok())
        .unwrap()
}

#[test]
fn mixture_error_reports_and_charges_the_probe() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let mut cfg = base_config();
    cfg["data"]["public"] = json!("data.csv");
    let path = write_config(dir.path(), "same.json", cfg);
    let out = dir.path().join("out");
    let o = pmwpub(&["mixture-error", "--config", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let line = text.lines().next().unwrap();
    assert!(line.starts_with("best mixture error estimate:"));
    assert!(first_number(line) < 1e-3, "{line}");
    assert!(out.join("mixture_error.json").exists());

    // single-row public data that disagrees with every private row on every attribute
    let mut csv = String::from("sex,age,job\n");
    for _ in 0..10 {
        csv.push_str("Female,90,b\n");
    }
    fs::write(dir.path().join("private.csv"), csv).unwrap();
    fs::write(dir.path().join("public.csv"), "sex,age,job\nMale,12,a\n").unwrap();
    let mut cfg = base_config();
    cfg["data"] = json!({"path": "private.csv", "public": "public.csv", "schema": "schema.json"});
    cfg["queries"] = json!({"k": 1, "workloads": 1});
    let path = write_config(dir.path(), "disjoint.json", cfg);
    let o = pmwpub(&[
        "mixture-error", "--config", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap(),
        "--epsilon-probe", "0.5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(first_number(lines.next().unwrap()), 1.0);
    let ledger_line = lines.next().unwrap();
    assert!(ledger_line.contains("ledger: +0.125 zCDP rho"), "{ledger_line}");
    let json_start = text.find('{').unwrap();
    let v: Value = serde_json::from_str(&text[json_start..]).unwrap();
    assert_eq!(v["ledger"]["releases"][0]["kind"], json!("mixture_probe"));
}

#[test]
fn synthesize_from_a_run_file() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let path = write_config(dir.path(), "exp.json", base_config());
    let out = dir.path().join("out");
    assert!(pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]).status.success());
    let run = out.join("runs/T5_eps0_rep0.json");
    let synth = dir.path().join("synth/rows.csv");
    let o = pmwpub(&["synthesize", "--report", run.to_str().unwrap(), "--rows", "250", "--out", synth.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&synth);
    assert_eq!(rows.len(), 250);
    assert!(rows.iter().all(|r| r[0].parse::<u32>().unwrap() < 2 && r[1].parse::<u32>().unwrap() < 3));

    // a bare report works with an explicit schema
    let v: Value = serde_json::from_str(&fs::read_to_string(&run).unwrap()).unwrap();
    let bare = dir.path().join("bare.json");
    fs::write(&bare, v["report"].to_string()).unwrap();
    let schema = dir.path().join("schema.json");
    let o = pmwpub(&[
        "synthesize", "--report", bare.to_str().unwrap(), "--schema", schema.to_str().unwrap(),
        "--rows", "10", "--out", synth.to_str().unwrap(),
    ]);
    assert!(o.status.success());

    let mut missing = v.clone();
    missing["report"].as_object_mut().unwrap().remove("distribution");
    let broken = dir.path().join("broken.json");
    fs::write(&broken, missing.to_string()).unwrap();
    let o = pmwpub(&["synthesize", "--report", broken.to_str().unwrap(), "--rows", "10", "--out", synth.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no distribution"));
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    toy_data(dir.path());
    let d = dir.path().to_str().unwrap();

    let o = pmwpub(&["run", "--config", &format!("{d}/missing.json")]);
    assert_eq!(o.status.code(), Some(1));
    let mut cfg = base_config();
    cfg["epsilons"] = json!([]);
    let path = write_config(dir.path(), "empty.json", cfg);
    assert_eq!(pmwpub(&["run", "--config", path.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(pmwpub(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(pmwpub(&["--help"]).status.code(), Some(0));

    fs::write(dir.path().join("bad.csv"), "sex,age,job\nOther,12,a\n").unwrap();
    let mut cfg = base_config();
    cfg["data"]["path"] = json!("bad.csv");
    let path = write_config(dir.path(), "bad.json", cfg);
    let o = pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", &format!("{d}/o1")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"));

    let mut cfg = base_config();
    cfg["epsilons"] = json!([0.5, 2.0]);
    cfg["epsilon_cap"] = json!(1.0);
    let path = write_config(dir.path(), "cap.json", cfg);
    let o = pmwpub(&["run", "--config", path.to_str().unwrap(), "--out-dir", &format!("{d}/o2")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("o2/runs/T5_eps0_rep0.json").exists());
}
