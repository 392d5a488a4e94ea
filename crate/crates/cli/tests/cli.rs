use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbm-mcem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn generate(dir: &Path) {
    let out = run(&[
        "generate", "--n", "120", "--degree", "14", "--seed", "5", "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_then_fit_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    let fit = tmp.path().join("fit");
    generate(&inst);
    for f in ["edges.txt", "labels.txt", "instance.json"] {
        assert!(inst.join(f).exists());
    }
    let out = run(&[
        "fit", "--instance", inst.to_str().unwrap(), "--max-iter", "3", "--out",
        fit.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fit.join("trajectory.csv").exists());
    let out = run(&[
        "metrics",
        inst.join("labels.txt").to_str().unwrap(),
        inst.join("labels.txt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("nmi 1.000000") && text.contains("mmd 0.000000"), "{text}");
}

#[test]
fn parallel_fit_writes_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    let fit = tmp.path().join("fit");
    generate(&inst);
    let out = run(&[
        "fit", "--instance", inst.to_str().unwrap(), "--method", "parallel-nocomm",
        "--workers", "2", "--per-group", "20", "--max-iter", "2", "--out",
        fit.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ledger = fs::read_to_string(fit.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1 + 2 * 2);
}

#[test]
fn experiment_requires_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, "{}").unwrap();
    let out = run(&["experiment", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn experiment_from_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(
        &cfg,
        r#"{
            "source": {"synthetic": {"n": 90, "pi": [0.5, 0.5], "oir": 0.1, "avg_degree": 12.0,
                       "beta": [0.5], "covariate_q": 0.5, "seed": 0}},
            "methods": ["full", "parallel-comm"],
            "workers": 2, "per_group": 20, "max_iter": 2, "m": 4, "burnin": 2
        }"#,
    )
    .unwrap();
    let dir = tmp.path().join("out");
    let out = run(&[
        "experiment", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = fs::read_to_string(dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 9"));
}

#[test]
fn bad_input_is_a_config_error() {
    let out = run(&["fit", "--edges", "/does/not/exist", "--k", "2", "--out", "x"]);
    assert_eq!(code(&out), 1);
    let out = run(&["bic", "--edges", "/does/not/exist", "--k-min", "3", "--k-max", "2", "--out", "x"]);
    assert_eq!(code(&out), 1);
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn runtime_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = tmp.path().join("e.txt");
    // A path graph: cleaning removes every node.
    fs::write(&edges, "1 2\n2 3\n").unwrap();
    let out = run(&["fit", "--edges", edges.to_str().unwrap(), "--k", "2", "--out", tmp.path().join("f").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
