use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ergostat"));
    c.env_remove("ERGOSTAT_THREADS");
    c
}

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn simulate(model: &str, n: usize, seed: u64, path: &Path) {
    let m = models().join(model);
    let out = run(&[
        "simulate",
        "--model",
        m.to_str().unwrap(),
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
}

#[test]
fn simulate_is_deterministic() {
    let m = models().join("fair-coin.toml");
    let a = run(&["simulate", "--model", m.to_str().unwrap(), "--n", "50", "--seed", "4"]);
    let b = run(&["simulate", "--model", m.to_str().unwrap(), "--n", "50", "--seed", "4"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert_eq!(text.lines().count(), 50);
    assert!(text.lines().all(|l| l == "0" || l == "1"));
}

#[test]
fn model_echo_and_errors() {
    let v = json(&run(&["model", "--model", models().join("rotation.toml").to_str().unwrap()]));
    assert_eq!(v["spec"]["kind"], "rotation");
    assert_eq!(v["capabilities"]["exact_cell_prob"], true);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "kind = \"finite-markov\"\ntransition = [[0.5, 0.6], [0.5, 0.5]]\nemissions = [0.0, 1.0]\n").unwrap();
    let out = run(&["model", "--model", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transition"));
}

#[test]
fn gof_self_trial_and_data() {
    let m = models().join("fair-coin.toml");
    let v = json(&run(&["gof", "--model", m.to_str().unwrap(), "--n", "300", "--n-cal", "99", "--seed", "1"]));
    assert!(v["decision"] == "accept_H0" || v["decision"] == "reject_H0");
    assert_eq!(v["config"]["n"], 300);
    assert_eq!(v["statistic"]["m_max"], 3);
    let stat = v["statistic"]["value"].as_f64().unwrap();
    let gamma = v["gamma_hat"].as_f64().unwrap();
    assert_eq!(v["decision"] == "reject_H0", stat >= gamma);

    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("chain.txt");
    simulate("markov-stay-0.8.toml", 4000, 3, &data);
    let v = json(&run(&["gof", "--model", m.to_str().unwrap(), "--data", data.to_str().unwrap(), "--n-cal", "99"]));
    assert_eq!(v["decision"], "reject_H0");

    let out = run(&["gof", "--model", m.to_str().unwrap(), "--data", data.to_str().unwrap(), "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_and_distance() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y, z) = (dir.path().join("x"), dir.path().join("y"), dir.path().join("z"));
    simulate("markov-stay-0.8.toml", 2000, 1, &x);
    simulate("markov-stay-0.2.toml", 2000, 2, &y);
    simulate("markov-stay-0.2.toml", 2000, 3, &z);
    let v = json(&run(&[
        "classify",
        "--x",
        x.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--z",
        z.to_str().unwrap(),
        "--m-max",
        "2",
        "--l-max",
        "1",
    ]));
    assert_eq!(v["label"], 2);
    assert_eq!(v["d_xz"]["m_max"], 2);
    assert!(v["certified"].is_boolean());

    let v = json(&run(&["distance", "--x", x.to_str().unwrap(), "--y", x.to_str().unwrap()]));
    assert_eq!(v["value"], 0.0);
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in ["value", "tail_bound", "m_max", "l_max"] {
        assert!(keys.contains(&k));
    }
    let m = models().join("markov-stay-0.8.toml");
    let v = json(&run(&["distance", "--x", x.to_str().unwrap(), "--model", m.to_str().unwrap()]));
    assert!(v["value"].as_f64().unwrap() < 0.3);
}

#[test]
fn changepoint_with_scan_and_csv_column() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate("coin-0.9.toml", 300, 1, &a);
    simulate("fair-coin.toml", 700, 2, &b);
    let mut csv = String::from("idx,value\n");
    let values: Vec<String> = [&a, &b].iter().flat_map(|p| fs::read_to_string(p).unwrap().lines().map(String::from).collect::<Vec<_>>()).collect();
    for (i, v) in values.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    let data = dir.path().join("z.csv");
    fs::write(&data, csv).unwrap();
    let scan = dir.path().join("scan.csv");
    let v = json(&run(&[
        "changepoint",
        "--data",
        data.to_str().unwrap(),
        "--column",
        "value",
        "--emit-scan",
        scan.to_str().unwrap(),
    ]));
    assert_eq!(v["n"], 1000);
    assert_eq!(v["boundary"], 32);
    let k = v["k_hat"].as_u64().unwrap();
    assert!(k.abs_diff(300) <= 30, "k_hat = {k}");
    let text = fs::read_to_string(&scan).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,dhat"));
    assert_eq!(lines.count(), 1000 - 2 * 32 + 1);

    let out = run(&["changepoint", "--data", data.to_str().unwrap(), "--column", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["changepoint", "--data", data.to_str().unwrap(), "--column", "value", "--boundary", "sqrt("]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_input_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.txt");
    fs::write(&data, "0.5\n# comment\n1.5\nabc\n").unwrap();
    let out = run(&["changepoint", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":4:"));
}

#[test]
fn experiment_writes_outputs_and_respects_threads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        r#"
test = "classify"
n_grid = [100, 200]
trials = 4
seed = 5

[models.x]
kind = "iid-discrete"
atoms = [0.0, 1.0]
probs = [0.5, 0.5]

[models.y]
kind = "iid-discrete"
atoms = [0.0, 1.0]
probs = [0.1, 0.9]
"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("out{threads}"));
        let out = bin()
            .env("ERGOSTAT_THREADS", threads)
            .args(["experiment", "--spec", spec.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()])
            .output()
            .unwrap();
        let summaries = json(&out);
        assert_eq!(summaries.as_array().unwrap().len(), 2);
        let csv = fs::read_to_string(out_dir.join("records.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("test,n,trial,seed,outcome,truth,stat_a,stat_b,error,duration_s")
        );
        let rows: Vec<String> = lines
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        assert_eq!(rows.len(), 8);
        let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["spec"]["trials"], 4);
        outputs.push(rows);
    }
    assert_eq!(outputs[0], outputs[1]);

    let out = bin()
        .env("ERGOSTAT_THREADS", "zero")
        .args(["experiment", "--spec", spec.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["gof"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let m = models().join("fair-coin.toml");
    assert_eq!(
        run(&["distance", "--x", "a", "--y", "b", "--model", m.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn shipped_experiment_specs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("experiments");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let spec = ergostat::ExperimentSpec::load(&path).unwrap();
        spec.validate().unwrap();
    }
}
