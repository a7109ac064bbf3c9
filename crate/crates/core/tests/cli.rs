//! End-to-end tests of the `osca` binary: the full pipeline, artifact
//! determinism across reruns, and the error/exit-code contract.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn osca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osca"))
        .args(args)
        .output()
        .expect("spawn osca")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small dimensions keep each binary invocation well under a second.
const TINY_CONFIG: &str = r#"
seed = 5

[synth]
num_videos = 24
segments_per_video = [3, 6]
feature_dim = 16
steps_per_segment = 3

[model]
hidden_size = 8
embedding_dim = 4
mlp = [8]
fusion_mlp = [16, 9]

[train]
epochs = 2
batch_size = 16
learning_rate = 0.001
"#;

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY_CONFIG).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(path: &Path, name: &str) -> String {
    path.join(name).to_string_lossy().into_owned()
}

#[test]
fn the_full_pipeline_runs_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_tiny_config(root);

    assert_ok(&osca(&["synth", "--config", &cfg, "--out", &s(root, "c")]));
    let corpus = s(root, "c/corpus.jsonl");
    assert_ok(&osca(&["split", "--config", &cfg, "--corpus", &corpus, "--out", &s(root, "sp")]));
    let split_corpus = s(root, "sp/corpus.jsonl");
    assert_ok(&osca(&["train", "--config", &cfg, "--corpus", &split_corpus, "--out", &s(root, "t")]));
    let ckpt = s(root, "t/checkpoint.ckpt");
    assert_ok(&osca(&[
        "eval", "--config", &cfg, "--corpus", &split_corpus,
        "--checkpoint", &ckpt, "--out", &s(root, "e"),
    ]));
    assert_ok(&osca(&[
        "sweep", "--config", &cfg, "--corpus", &split_corpus,
        "--checkpoint", &ckpt, "--out", &s(root, "w"),
    ]));

    for artifact in [
        "c/corpus.jsonl", "c/corpus.feat", "c/resolved_config.toml",
        "sp/corpus.jsonl",
        "t/checkpoint.ckpt", "t/history.csv", "t/curves.png",
        "e/metrics.txt", "e/metrics.json", "e/confusion.csv",
        "w/sweep.csv", "w/sweep.png",
    ] {
        assert!(root.join(artifact).exists(), "missing {artifact}");
    }

    let history = fs::read_to_string(root.join("t/history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,val_top1,val_top5,val_f1\n"));
    assert_eq!(history.lines().count(), 4, "epoch 0 plus two epochs:\n{history}");
    let sweep = fs::read_to_string(root.join("w/sweep.csv")).unwrap();
    assert!(sweep.starts_with("action_noise,state_noise,top1,top5,f1,stddev\n"));
    assert_eq!(sweep.lines().count(), 5, "four default levels:\n{sweep}");

    // Rerunning with the same inputs must reproduce every byte.
    assert_ok(&osca(&["synth", "--config", &cfg, "--out", &s(root, "c2")]));
    assert_ok(&osca(&["train", "--config", &cfg, "--corpus", &split_corpus, "--out", &s(root, "t2")]));
    assert_ok(&osca(&[
        "sweep", "--config", &cfg, "--corpus", &split_corpus,
        "--checkpoint", &ckpt, "--out", &s(root, "w2"),
    ]));
    for (a, b) in [
        ("c/corpus.jsonl", "c2/corpus.jsonl"),
        ("c/corpus.feat", "c2/corpus.feat"),
        ("t/checkpoint.ckpt", "t2/checkpoint.ckpt"),
        ("t/history.csv", "t2/history.csv"),
        ("t/curves.png", "t2/curves.png"),
        ("w/sweep.csv", "w2/sweep.csv"),
        ("w/sweep.png", "w2/sweep.png"),
    ] {
        assert_eq!(
            fs::read(root.join(a)).unwrap(),
            fs::read(root.join(b)).unwrap(),
            "{a} and {b} differ between reruns"
        );
    }
}

#[test]
fn eval_without_a_checkpoint_scores_an_untrained_model() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_tiny_config(root);
    assert_ok(&osca(&["synth", "--config", &cfg, "--out", &s(root, "c")]));
    assert_ok(&osca(&[
        "split", "--config", &cfg, "--corpus", &s(root, "c/corpus.jsonl"),
        "--out", &s(root, "sp"),
    ]));
    let out = osca(&[
        "eval", "--config", &cfg, "--corpus", &s(root, "sp/corpus.jsonl"),
        "--out", &s(root, "e"),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("untrained"), "{stdout}");
    assert!(root.join("e/metrics.json").exists());
}

#[test]
fn annotate_writes_labels_and_an_audit() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_tiny_config(root);
    assert_ok(&osca(&["synth", "--config", &cfg, "--out", &s(root, "c")]));
    let out = osca(&[
        "annotate", "--corpus", &s(root, "c/corpus.jsonl"), "--out", &s(root, "a"),
    ]);
    assert_ok(&out);
    let audit = fs::read_to_string(root.join("a/audit.txt")).unwrap();
    assert!(audit.contains("total:"), "{audit}");
    let annotations = fs::read_to_string(root.join("a/annotations.jsonl")).unwrap();
    assert!(!annotations.trim().is_empty());
    let first: serde_json::Value = serde_json::from_str(annotations.lines().next().unwrap()).unwrap();
    assert!(first.get("video_id").is_some() && first.get("status").is_some());
}

#[test]
fn stats_covers_transitions_histograms_and_priors() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_tiny_config(root);
    assert_ok(&osca(&["synth", "--config", &cfg, "--out", &s(root, "c")]));
    assert_ok(&osca(&["stats", "--corpus", &s(root, "c/corpus.jsonl"), "--out", &s(root, "st")]));
    for artifact in [
        "st/transition_counts.csv", "st/transition_normalized.csv", "st/transitions.png",
        "st/verb_state_histogram.csv", "st/noun_state_histogram.csv",
        "st/states_per_verb.csv", "st/states_per_noun.csv",
        "st/class_priors.csv", "st/class_priors.png",
    ] {
        assert!(root.join(artifact).exists(), "missing {artifact}");
    }
    let priors = fs::read_to_string(root.join("st/class_priors.csv")).unwrap();
    assert_eq!(priors.lines().count(), 10, "header plus nine classes:\n{priors}");
}

#[test]
fn compose_check_tabulates_every_label_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = osca(&["compose-check", "--out", &s(dir.path(), "cc")]);
    assert_ok(&out);
    let csv = fs::read_to_string(dir.path().join("cc/compose_rules.csv")).unwrap();
    assert_eq!(csv.lines().count(), 257, "header plus 16x16 pairs");
    assert!(csv.contains("pre_activate,post_activate,activate"));
    assert!(csv.contains("pre_activate,post_deactivate,no_osc"));
    assert!(csv.contains("pre_deposit,post_remove,no_osc"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("8 matched"), "{stdout}");
    assert!(stdout.contains("6 inverse"), "{stdout}");
}

#[test]
fn config_violations_are_listed_together_and_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        "[split]\nratios = [0.5, 0.2, 0.2]\n[model]\nstreams = \"vid,warp\"\n[train]\nlearning_rate = -3.0\n",
    )
    .unwrap();
    let out = osca(&[
        "synth", "--config", &bad.to_string_lossy(), "--out", &s(dir.path(), "x"),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let err = stderr(&out);
    for needle in ["ratios must sum to 1", "warp", "learning_rate"] {
        assert!(err.contains(needle), "missing '{needle}' in:\n{err}");
    }
    assert!(!dir.path().join("x/resolved_config.toml").exists());
}

#[test]
fn a_missing_corpus_path_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = osca(&["stats", "--out", &s(dir.path(), "st")]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("corpus"), "{}", stderr(&out));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg_path = root.join("base.toml");
    fs::write(&cfg_path, "seed = 1\n").unwrap();
    let out = osca(&[
        "compose-check", "--config", &cfg_path.to_string_lossy(),
        "--seed", "9", "--noise", "0.5,0.25", "--window", "3",
        "--out", &s(root, "cc"),
    ]);
    assert_ok(&out);
    let resolved = fs::read_to_string(root.join("cc/resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 9"), "{resolved}");
    assert!(resolved.contains("noisy(0.5,0.25,9)"), "{resolved}");
    assert!(resolved.contains("window = 3"), "{resolved}");
}

#[test]
fn eval_rejects_a_checkpoint_for_a_different_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write_tiny_config(root);
    assert_ok(&osca(&["synth", "--config", &cfg, "--out", &s(root, "c")]));
    assert_ok(&osca(&[
        "split", "--config", &cfg, "--corpus", &s(root, "c/corpus.jsonl"),
        "--out", &s(root, "sp"),
    ]));
    // epochs=0 records the untrained model, so the checkpoint is cheap.
    let quick = root.join("quick.toml");
    fs::write(&quick, TINY_CONFIG.replace("epochs = 2", "epochs = 0")).unwrap();
    assert_ok(&osca(&[
        "train", "--config", &quick.to_string_lossy(),
        "--corpus", &s(root, "sp/corpus.jsonl"), "--out", &s(root, "t"),
    ]));

    // A corpus with a different vocabulary (3 verbs per state instead of 4).
    let other = root.join("other.toml");
    fs::write(&other, TINY_CONFIG.replace("[synth]", "[synth]\nverbs_per_state = 3")).unwrap();
    assert_ok(&osca(&[
        "synth", "--config", &other.to_string_lossy(), "--out", &s(root, "c2"),
    ]));
    let out = osca(&[
        "eval", "--config", &cfg, "--corpus", &s(root, "c2/corpus.jsonl"),
        "--checkpoint", &s(root, "t/checkpoint.ckpt"), "--out", &s(root, "e"),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("vocabulary"), "{}", stderr(&out));
}
