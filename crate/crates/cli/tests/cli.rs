use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn unea(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unea")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}")))
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a spec and a small config, generates the data and trains on it.
fn synth_and_train(dir: &Path, spec: &str, config: &str) -> Output {
    let data = dir.join("data");
    fs::write(dir.join("spec.txt"), spec).unwrap();
    fs::write(dir.join("config.txt"), config).unwrap();
    let out = unea(&["synth", "--spec", p(&dir.join("spec.txt")), "--out", p(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let f = |name: &str| data.join(name).to_str().unwrap().to_string();
    unea(&[
        "--workers",
        "1",
        "train",
        "--data",
        p(&data),
        "--ent-emb",
        &f("ent_feat_1.emb"),
        &f("ent_feat_2.emb"),
        "--rel-emb",
        &f("rel_feat_1.emb"),
        &f("rel_feat_2.emb"),
        "--config",
        p(&dir.join("config.txt")),
        "--out",
        p(&dir.join("ckpt")),
    ])
}

const SMALL: &str = "dim = 32\nepochs = 4\nm = 2\n";

#[test]
fn usage_errors_exit_one() {
    let out = unea(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(unea(&[]).status.code(), Some(1));
    assert_eq!(unea(&["--help"]).status.code(), Some(0));
    assert_eq!(unea(&["inspect", "--checkpoint", "x", "--entity", "1", "--side", "3"]).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = unea(&["evaluate", "--checkpoint", p(dir.path()), "--data", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
    fs::write(dir.path().join("spec.txt"), "n_entities = 0\n").unwrap();
    let out = unea(&["synth", "--spec", p(&dir.path().join("spec.txt")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_train_evaluate_export_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_and_train(dir.path(), "seed = 2\n", SMALL);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_json(&out);
    assert_eq!(lines.len(), 5);
    assert!(lines[0]["total"].is_number() && lines[3]["metrics"]["hits1"].is_number());
    assert!(lines[4]["hits1"].is_number());

    let ckpt = dir.path().join("ckpt");
    let data = dir.path().join("data");
    for flag in [None, Some("--csls")] {
        let mut args = vec!["evaluate", "--checkpoint", p(&ckpt), "--data", p(&data)];
        args.extend(flag);
        let out = unea(&args);
        assert!(out.status.success());
        let m = &stdout_json(&out)[0];
        for key in ["hits1", "hits10", "mrr"] {
            let v = m[key].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
    // evaluation of the checkpoint matches the last in-training evaluation
    let out = unea(&["evaluate", "--checkpoint", p(&ckpt), "--data", p(&data)]);
    assert_eq!(stdout_json(&out)[0]["hits1"], lines[3]["metrics"]["hits1"]);

    let export = dir.path().join("align.tsv");
    let out = unea(&[
        "export-alignments",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--out",
        p(&export),
        "--top",
        "3",
    ]);
    assert!(out.status.success());
    let text = fs::read_to_string(&export).unwrap();
    assert_eq!(text.lines().count(), 600);
    let scores: Vec<f64> = text.lines().map(|l| l.split('\t').nth(2).unwrap().parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let out = unea(&["inspect", "--checkpoint", p(&ckpt), "--entity", "3", "--tree"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let info = &stdout_json(&out)[0];
    assert_eq!(info["entity"], 3);
    let tree = &info["tree"];
    assert_eq!(tree["entity"], 3);
    let kids = tree["children"].as_array().unwrap();
    assert!(!kids.is_empty() && kids.len() <= 8);
    let total: f64 = kids.iter().map(|k| k["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-4);

    let out = unea(&["inspect", "--checkpoint", p(&ckpt), "--entity", "999999"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn noiseless_twin_is_aligned_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth_and_train(
        dir.path(),
        "feature_noise_sigma = 0\nstructure_dropout = 0\n",
        SMALL,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = unea(&[
        "evaluate",
        "--checkpoint",
        p(&dir.path().join("ckpt")),
        "--data",
        p(&dir.path().join("data")),
    ]);
    assert_eq!(stdout_json(&out)[0]["hits1"].as_f64(), Some(1.0));
}

#[test]
fn single_worker_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(synth_and_train(d.path(), "n_entities = 80\nn_triples = 300\n", SMALL).status.success());
    }
    let read = |d: &Path| fs::read(d.join("ckpt/history.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    let emb = |d: &Path| fs::read(d.join("ckpt/entities_1.emb")).unwrap();
    assert_eq!(emb(a.path()), emb(b.path()));
}
