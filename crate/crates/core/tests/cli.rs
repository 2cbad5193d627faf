use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diablo::data::{generate_synthetic, load_idx, SyntheticSpec};
use diablo::evaluation::EmbeddingIndex;
use diablo::harness::{Checkpoint, RunConfig, CHECKPOINT_FILE, METRICS_FILE, RECALL_FILE};

const SMALL: &str = r#"{
  "data": {"synthetic": {"classes": 4, "samples_per_class": 10}},
  "train": {"epochs": 2, "steps_per_epoch": 3, "classes_per_batch": 2, "samples_per_class": 3},
  "eval_ks": [1, 2]
}"#;

fn diablo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diablo")).args(args).env_remove("DIABLO_THREADS").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    std::fs::write(&path, SMALL).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(config: &Path, seed: u64, out: &Path) {
    let result = diablo(&["train", "--config", s(config), "--seed", &seed.to_string(), "--out", s(out)]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
}

fn last_recall(metrics: &Path) -> f64 {
    let text = std::fs::read_to_string(metrics).unwrap();
    let last = text.lines().last().unwrap();
    last.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&config, 7, &a);
    train(&config, 7, &b);
    for file in [METRICS_FILE, CHECKPOINT_FILE] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let metrics = std::fs::read_to_string(a.join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,loss,recall_at_1"));
    assert_eq!(metrics.lines().count(), 3);
}

/// Exhaustive-sort recall, independent of the library's ranking code.
fn oracle_recall(index: &EmbeddingIndex, k: usize) -> f64 {
    let e = index.embeddings();
    let rows: Vec<&[f64]> = e.data().chunks(e.shape()[1]).collect();
    let labels = index.labels();
    let hits = (0..rows.len())
        .filter(|&q| {
            let mut order: Vec<(f64, usize)> = (0..rows.len())
                .filter(|&i| i != q)
                .map(|i| (rows[q].iter().zip(rows[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            order[..k].iter().any(|&(_, i)| labels[i] == labels[q])
        })
        .count();
    hits as f64 / rows.len() as f64
}

#[test]
fn evaluate_agrees_with_the_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let run = dir.path().join("run");
    train(&config, 1, &run);
    let result = diablo(&["evaluate", "--checkpoint", s(&run.join(CHECKPOINT_FILE)), "--k", "1,2,4"]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));

    let csv = std::fs::read_to_string(run.join(RECALL_FILE)).unwrap();
    let rows: Vec<(usize, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (k, r) = l.split_once(',').unwrap();
            (k.parse().unwrap(), r.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 4]);
    assert_eq!(rows[0].1, last_recall(&run.join(METRICS_FILE)));
    assert!(rows.windows(2).all(|w| w[0].1 <= w[1].1));

    let ckpt = Checkpoint::load(&run.join(CHECKPOINT_FILE)).unwrap();
    let (_, val) = ckpt.config.datasets(Path::new("")).unwrap();
    let index = ckpt.model.index(&val).unwrap();
    for (k, r) in rows {
        assert_eq!(r, oracle_recall(&index, k), "K {k}");
    }
}

#[test]
fn single_cell_sweep_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let sweep = dir.path().join("sweep");
    let result = diablo(&[
        "ablate",
        "--config",
        s(&config),
        "--seed",
        "3",
        "--mode",
        "dimension",
        "--strategy",
        "pre",
        "--n",
        "8",
        "--seeds",
        "1",
        "--out",
        s(&sweep),
    ]);
    assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
    let run = dir.path().join("run");
    train(&config, 3, &run);
    let cell = sweep.join("dimension-pre-n8").join("seed-3");
    assert_eq!(std::fs::read(cell.join(METRICS_FILE)).unwrap(), std::fs::read(run.join(METRICS_FILE)).unwrap());
    let runs = std::fs::read_to_string(sweep.join("runs.csv")).unwrap();
    let recall: f64 = runs.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(recall, last_recall(&run.join(METRICS_FILE)));
    assert!(sweep.join("summary.csv").exists());
}

#[test]
fn generated_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let result = diablo(&["gen-data", "--config", s(&config), "--seed", "5", "--out", s(out)]);
        assert_eq!(code(&result), 0, "{}", String::from_utf8_lossy(&result.stderr));
    }
    let images = std::fs::read(a.join("images.idx3-ubyte")).unwrap();
    let labels = std::fs::read(a.join("labels.idx1-ubyte")).unwrap();
    assert_eq!(images[..4], [0, 0, 8, 3]);
    assert_eq!(labels[..4], [0, 0, 8, 1]);
    assert_eq!(images, std::fs::read(b.join("images.idx3-ubyte")).unwrap());
    assert_eq!(labels, std::fs::read(b.join("labels.idx1-ubyte")).unwrap());

    let loaded = load_idx(a.join("images.idx3-ubyte"), a.join("labels.idx1-ubyte")).unwrap();
    let spec = SyntheticSpec { classes: 4, samples_per_class: 10, seed: 5, ..SyntheticSpec::default() };
    assert_eq!(loaded, generate_synthetic(&spec).unwrap());
}

#[test]
fn trains_from_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&diablo(&["gen-data", "--config", s(&config), "--out", s(&data)])), 0);
    let mut cfg = RunConfig::from_json(SMALL).unwrap();
    cfg.data = diablo::harness::DataSource::Idx {
        images: "data/images.idx3-ubyte".into(),
        labels: "data/labels.idx1-ubyte".into(),
    };
    let idx_config = dir.path().join("idx.json");
    std::fs::write(&idx_config, cfg.to_json()).unwrap();
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    train(&config, 0, &x);
    train(&idx_config, 0, &y);
    assert_eq!(std::fs::read(x.join(METRICS_FILE)).unwrap(), std::fs::read(y.join(METRICS_FILE)).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"epochz": 3}}"#).unwrap();
    let out = diablo(&["train", "--config", s(&bad), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.epochz"));

    std::fs::write(&bad, r#"{"model": {"attention": {"branches": 3}}}"#).unwrap();
    let out = diablo(&["train", "--config", s(&bad), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.attention.embedding"));

    let config = small_config(dir.path());
    let out = diablo(&["ablate", "--config", s(&config), "--n", "3", "--out", s(&dir.path().join("a"))]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&diablo(&["ablate", "--mode", "sideways"])), 2);
    assert_eq!(code(&diablo(&["frobnicate"])), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_diablo"))
        .args(["gradcheck", "--seeds", "1"])
        .env("DIABLO_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn io_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&diablo(&["train", "--config", s(&missing)])), 3);

    let config = small_config(dir.path());
    let run = dir.path().join("run");
    train(&config, 0, &run);
    let ckpt = run.join(CHECKPOINT_FILE);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[8] = 2;
    std::fs::write(&ckpt, &bytes).unwrap();
    let out = diablo(&["evaluate", "--checkpoint", s(&ckpt)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn gradcheck_exit_codes() {
    let clean = diablo(&["gradcheck", "--seeds", "1"]);
    assert_eq!(code(&clean), 0);
    let report = String::from_utf8_lossy(&clean.stdout);
    for pipeline in ["feature-pre", "feature-post", "dimension-pre", "dimension-post"] {
        assert!(report.contains(&format!("pipeline {pipeline}")), "{pipeline}");
    }
    let faulty = diablo(&["gradcheck", "--seeds", "1", "--inject-fault"]);
    assert_eq!(code(&faulty), 4);
}
