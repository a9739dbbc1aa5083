//! Drives the `dialog-bandit` binary end to end.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use dialog_bandit::experiment::{run_experiment, ExperimentConfig, REGRET_HEADER};
use dialog_bandit::{load_embeddings, FeatureMapKind, PolicyKind};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialog-bandit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_tiny_dataset(path: &Path) {
    let mut tsv = String::from("context_id\tcontext_text\tresponse_id\tresponse_text\tlabel\n");
    let topics = [
        ("c0", "how do I install the nvidia driver on ubuntu", "driver"),
        ("c1", "my wifi stops working after suspend on ubuntu", "wifi"),
    ];
    for (cid, text, topic) in topics {
        for j in 0..10 {
            let (reply, label) = if j == 0 {
                (format!("try reinstalling the {topic} package with apt"), 1)
            } else {
                (format!("reply {j} about the {topic} or apt or something else"), 0)
            };
            tsv.push_str(&format!("{cid}\t{text}\t{cid}-r{j}\t{reply}\t{label}\n"));
        }
    }
    fs::write(path, tsv).unwrap();
}

#[test]
fn featurize_tiny_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("tiny.tsv");
    write_tiny_dataset(&data);
    let out1 = tmp.path().join("a.emb");
    let out2 = tmp.path().join("b.emb");
    for out in [&out1, &out2] {
        let run = bin(&["featurize", "--dataset", p(&data), "--out", p(out), "--method", "tfidf-pca", "--dim", "3"]);
        assert!(run.status.success(), "{}", stderr(&run));
    }
    let store = load_embeddings(&out1).unwrap();
    assert_eq!(store.len(), 2 + 20);
    assert_eq!(store.dim(), 3);
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());

    let too_big = bin(&["featurize", "--dataset", p(&data), "--out", p(&tmp.path().join("c.emb")), "--dim", "500"]);
    assert_eq!(too_big.status.code(), Some(2));
    assert!(stderr(&too_big).contains("vocabulary"), "{}", stderr(&too_big));
    assert!(!tmp.path().join("c.emb").exists());
}

#[test]
fn make_synthetic_defaults_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let start = Instant::now();
    let run = bin(&["make-synthetic", "--out-dir", p(&a)]);
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert!(run.status.success(), "{}", stderr(&run));
    assert!(bin(&["make-synthetic", "--out-dir", p(&b)]).status.success());
    for file in ["dataset.tsv", "embeddings.emb", "truth.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let dataset = fs::read_to_string(a.join("dataset.tsv")).unwrap();
    assert_eq!(dataset.lines().count(), 1 + 1000 * 10);
    assert_eq!(fs::read_to_string(a.join("truth.csv")).unwrap().lines().count(), 8);

    let c = tmp.path().join("c");
    let wide = bin(&["make-synthetic", "--dim", "80", "--out-dir", p(&c)]);
    assert_eq!(wide.status.code(), Some(2));
    assert!(stderr(&wide).contains("4096"), "{}", stderr(&wide));
    assert!(!c.exists());
}

fn synthetic(dir: &Path) {
    let run = bin(&["make-synthetic", "--dim", "4", "--contexts", "120", "--seed", "3", "--out-dir", p(dir)]);
    assert!(run.status.success(), "{}", stderr(&run));
}

#[test]
fn simulate_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let env = tmp.path().join("env");
    synthetic(&env);
    let out = tmp.path().join("out");
    let (data, emb) = (env.join("dataset.tsv"), env.join("embeddings.emb"));
    let common = [
        "--dataset", p(&data),
        "--embeddings", p(&emb),
        "--policy", "ts", "--policy", "random",
        "--map", "linear", "--map", "bilinear",
        "--seed", "0", "--seed", "1",
        "--rounds", "300", "--k", "2", "--split", "100:20",
        "--out-dir", p(&out),
    ];
    let sim = bin(&[&["simulate"][..], &common[..]].concat());
    assert!(sim.status.success(), "{}", stderr(&sim));
    assert!(stderr(&sim).contains("final average cumulative regret"));

    let regret = fs::read_to_string(out.join("regret.csv")).unwrap();
    let mut lines = regret.lines();
    assert_eq!(lines.next(), Some(REGRET_HEADER));
    // T/10 rows for each of the 2×2×2 cells
    assert_eq!(lines.count(), 8 * 300 / 10);
    assert!(out.join("posteriors/ts_bilinear_seed1.bin").exists());

    let eval = bin(&[&["evaluate"][..], &common[..]].concat());
    assert!(eval.status.success(), "{}", stderr(&eval));
    let recall = fs::read(out.join("recall.csv")).unwrap();

    // the persisted posteriors are the trained agents: a one-pass run agrees
    let config = ExperimentConfig {
        dataset: env.join("dataset.tsv"),
        embeddings: env.join("embeddings.emb"),
        policies: vec![PolicyKind::ThompsonSampling, PolicyKind::Random],
        maps: vec![FeatureMapKind::Linear, FeatureMapKind::Bilinear],
        seeds: vec![0, 1],
        rounds: 300,
        k: 2,
        split: (100, 20),
        out_dir: tmp.path().join("lib"),
        ..ExperimentConfig::default()
    };
    run_experiment(&config).unwrap();
    assert_eq!(fs::read(config.out_dir.join("recall.csv")).unwrap(), recall);
    assert_eq!(fs::read_to_string(config.out_dir.join("regret.csv")).unwrap(), regret);

    // evaluate needs the posteriors written by simulate
    fs::remove_file(out.join("posteriors/ts_linear_seed0.bin")).unwrap();
    let missing = bin(&[&["evaluate"][..], &common[..]].concat());
    assert_eq!(missing.status.code(), Some(3));
    assert!(stderr(&missing).contains("ts_linear_seed0.bin"));
}

#[test]
fn missing_embeddings_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let env = tmp.path().join("env");
    synthetic(&env);
    let out = tmp.path().join("out");
    let nowhere = tmp.path().join("nowhere.emb");
    let run = bin(&[
        "simulate", "--dataset", p(&env.join("dataset.tsv")), "--embeddings", p(&nowhere),
        "--rounds", "50", "--split", "100:20", "--out-dir", p(&out),
    ]);
    assert_ne!(run.status.code(), Some(0));
    assert!(stderr(&run).contains("nowhere.emb"), "{}", stderr(&run));
    assert!(!out.exists());
}

#[test]
fn invalid_configs_leave_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let env = tmp.path().join("env");
    synthetic(&env);
    let data = env.join("dataset.tsv");
    let emb = env.join("embeddings.emb");
    let out = tmp.path().join("out");
    let base = ["simulate", "--dataset", p(&data), "--embeddings", p(&emb), "--out-dir", p(&out)];

    let cases: [&[&str]; 5] = [
        &["--k", "10", "--rounds", "10", "--split", "100:20"],
        &["--rounds", "0", "--split", "100:20"],
        &["--rounds", "10", "--split", "500:20"],
        &["--rounds", "10", "--split", "100:20", "--lambda=-1"],
        &["--rounds", "10", "--split", "100:20", "--dim-cap", "8"],
    ];
    for extra in cases {
        let run = bin(&[&base[..], extra].concat());
        assert_eq!(run.status.code(), Some(2), "{extra:?}: {}", stderr(&run));
        assert!(!out.exists(), "{extra:?} left output behind");
    }
    let bad_policy = bin(&[&base[..], &["--policy", "ucb"]].concat());
    assert_eq!(bad_policy.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let env = tmp.path().join("env");
    synthetic(&env);
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("grid.cfg");
    fs::write(
        &cfg,
        format!(
            "# small grid\ndataset = {}\nembeddings = {}\npolicy = ts, greedy\nmap = linear\nseed = 4,5\n\
             rounds = 40\nsplit = 100:20\nlog_stride = 20\nout_dir = {}\n",
            p(&env.join("dataset.tsv")),
            p(&env.join("embeddings.emb")),
            p(&out)
        ),
    )
    .unwrap();
    let run = bin(&["simulate", "--config", p(&cfg), "--rounds", "60"]);
    assert!(run.status.success(), "{}", stderr(&run));
    let regret = fs::read_to_string(out.join("regret.csv")).unwrap();
    // 2 policies × 1 map × 2 seeds, 60 rounds logged every 20
    assert_eq!(regret.lines().count(), 1 + 4 * 3);
    assert!(regret.lines().any(|l| l.starts_with("60,greedy,linear,5,")));

    fs::write(&cfg, "rounds = 10\ncolour = blue\n").unwrap();
    let bad = bin(&["simulate", "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("colour"));
}
