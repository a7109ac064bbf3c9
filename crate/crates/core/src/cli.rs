//! The `osca` command line.
//!
//! Every subcommand reads one optional TOML experiment config (see
//! [`crate::config`]) plus a handful of override flags, writes its artifacts
//! into the output directory and prints a short summary. The fully resolved
//! config lands next to the artifacts, so a run can be reproduced from its
//! output directory alone; nothing written depends on wall-clock time, so
//! reruns produce byte-identical files. Inputs are never modified.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::annotation::{annotate_video, AuditReport};
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_decision_samples_limited, class_priors, generate_synthetic, load_corpus, save_corpus,
    sidecar_path, split_corpus, Corpus, DecisionSample, Split,
};
use crate::error::{OscaError, Result};
use crate::eval::{
    collect_predictions, confusion, histogram_csv, metrics_report, noise_sweep, state_histograms,
    sweep_csv, transition_matrix,
};
use crate::labels::{inverse_of, FrameStateLabel, Phase, StateChangeClass, NUM_CLASSES};
use crate::model::{history_csv, load_checkpoint, save_checkpoint, train, ModelParams};
use crate::plot;
use crate::recognizers::compose_state_change;

#[derive(Debug, Parser)]
#[command(
    name = "osca",
    version,
    about = "Object state change anticipation: corpora, training, evaluation"
)]
struct Cli {
    /// Experiment config TOML; omitted sections keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the top-level seed (sections without their own seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Corpus JSONL path (features sit in the .feat sidecar next to it).
    #[arg(long, global = true, value_name = "FILE")]
    corpus: Option<PathBuf>,

    /// Enabled model streams: comma-separated subset of vid,action,state.
    #[arg(long, global = true, value_name = "LIST")]
    streams: Option<String>,

    /// Recognizer noise rates as `action,state`; shorthand for
    /// `noisy(action,state,<seed>)`.
    #[arg(long, global = true, value_name = "A,S")]
    noise: Option<String>,

    /// Visual window: feature rows of the last W observed segments.
    #[arg(long, global = true, value_name = "W")]
    window: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the annotation pipeline; write frame labels and an audit report.
    Annotate,
    /// Generate a synthetic corpus.
    Synth,
    /// Assign videos to train/val/test splits.
    Split,
    /// Train the anticipation network on the train/val splits.
    Train,
    /// Score a model on one split with the configured recognizer.
    Eval {
        /// Checkpoint to evaluate; default is a freshly initialized model.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Score a model across recognizer noise levels.
    Sweep {
        /// Checkpoint to evaluate; default is a freshly initialized model.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Corpus statistics: transitions, state histograms, class priors.
    Stats,
    /// Tabulate the pre/post frame-label composition rules.
    ComposeCheck,
}

/// Entry point for the `osca` binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code())
        }
    }
}

fn parse_noise(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let parsed: Option<(f64, f64)> = match parts.as_slice() {
        [a, b] => a.parse().ok().zip(b.parse().ok()),
        _ => None,
    };
    parsed.ok_or_else(|| {
        OscaError::Config(vec![format!(
            "--noise expects two comma-separated rates such as 0.25,0.25, got '{s}'"
        )])
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(corpus) = &cli.corpus {
        cfg.corpus.path = Some(corpus.clone());
    }
    if let Some(streams) = &cli.streams {
        cfg.model.streams = streams.clone();
    }
    if let Some(window) = cli.window {
        cfg.corpus.window = window;
    }
    if let Some(noise) = &cli.noise {
        let (a, s) = parse_noise(noise)?;
        cfg.recognizer.spec = format!("noisy({a},{s},{})", cfg.seed);
    }
    cfg.validate()?;

    let out = cfg.output.dir.clone();
    let resolved = cfg.save_resolved(&out)?;
    println!("wrote {}", resolved.display());

    match cli.command {
        Command::Annotate => cmd_annotate(&cfg, &out),
        Command::Synth => cmd_synth(&cfg, &out),
        Command::Split => cmd_split(&cfg, &out),
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval { checkpoint } => cmd_eval(&cfg, &out, checkpoint.as_deref()),
        Command::Sweep { checkpoint } => cmd_sweep(&cfg, &out, checkpoint.as_deref()),
        Command::Stats => cmd_stats(&cfg, &out),
        Command::ComposeCheck => cmd_compose_check(&out),
    }
}

fn require_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let path = cfg.corpus.path.as_deref().ok_or_else(|| {
        OscaError::Config(vec![
            "a corpus path is required: pass --corpus or set [corpus] path".to_string(),
        ])
    })?;
    load_corpus(path)
}

fn write_artifact(out: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = out.join(name);
    fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn collect_samples(
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    split: Option<Split>,
) -> Result<Vec<DecisionSample>> {
    let mut out = Vec::new();
    for video in corpus.videos_in_split(split) {
        out.extend(build_decision_samples_limited(
            video,
            cfg.corpus.window,
            cfg.corpus.max_history,
        )?);
    }
    Ok(out)
}

fn model_config_for(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<crate::model::ModelConfig> {
    let feature_dim = corpus.feature_dim().unwrap_or(0);
    let mc = cfg.model_config(
        feature_dim.max(1),
        corpus.vocabulary.num_verbs(),
        corpus.vocabulary.num_nouns(),
    )?;
    if mc.streams.visual && feature_dim == 0 {
        return Err(OscaError::Validation(
            "the corpus has no feature rows but the visual stream is enabled".into(),
        ));
    }
    Ok(mc)
}

/// The model to score: a checkpoint when one is given (checked against the
/// corpus), otherwise a freshly initialized, untrained model.
fn load_or_init_params(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    checkpoint: Option<&Path>,
) -> Result<ModelParams> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .or_else(|| cfg.eval.checkpoint.clone());
    match path {
        Some(p) => {
            let params = load_checkpoint(&p)?;
            let fp = corpus.vocabulary.fingerprint();
            if params.vocab_fingerprint() != fp {
                return Err(OscaError::Validation(format!(
                    "checkpoint {} was trained for vocabulary {} but the corpus has {}",
                    p.display(),
                    params.vocab_fingerprint(),
                    fp
                )));
            }
            if params.config().streams.visual {
                let d = params.config().feature_dim;
                if corpus.feature_dim() != Some(d) {
                    let have = corpus
                        .feature_dim()
                        .map_or("none".to_string(), |v| v.to_string());
                    return Err(OscaError::Shape(format!(
                        "checkpoint {} expects {d}-dim features, corpus has {have}",
                        p.display()
                    )));
                }
            }
            println!("loaded checkpoint {}", p.display());
            Ok(params)
        }
        None => {
            let mc = model_config_for(cfg, corpus)?;
            println!("no checkpoint given; scoring an untrained model");
            ModelParams::init(mc, &corpus.vocabulary.fingerprint(), cfg.seed)
        }
    }
}

fn cmd_annotate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let corpus = require_corpus(cfg)?;
    let mut audit = AuditReport::default();
    let mut lines = String::new();
    for video in &corpus.videos {
        let (annotations, report) = annotate_video(video)?;
        audit.merge(&report);
        for ann in annotations {
            let mut value = serde_json::to_value(&ann)?;
            value
                .as_object_mut()
                .expect("annotations serialize to objects")
                .insert(
                    "video_id".to_string(),
                    serde_json::Value::String(video.video_id.clone()),
                );
            lines.push_str(&serde_json::to_string(&value)?);
            lines.push('\n');
        }
    }
    write_artifact(out, "annotations.jsonl", &lines)?;
    write_artifact(out, "audit.txt", &audit.render())?;
    print!("{}", audit.render());
    Ok(())
}

fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let sc = cfg.synth_config()?;
    let corpus = generate_synthetic(&sc)?;
    let path = out.join("corpus.jsonl");
    save_corpus(&corpus, &path)?;
    println!("wrote {}", path.display());
    println!("wrote {}", sidecar_path(&path).display());
    println!(
        "videos: {}  segments: {}  feature dim: {}",
        corpus.videos.len(),
        corpus.num_segments(),
        sc.feature_dim
    );
    Ok(())
}

fn cmd_split(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut corpus = require_corpus(cfg)?;
    split_corpus(&mut corpus, cfg.split_ratios(), cfg.split_seed())?;
    let path = out.join("corpus.jsonl");
    save_corpus(&corpus, &path)?;
    println!("wrote {}", path.display());
    println!("wrote {}", sidecar_path(&path).display());
    for split in Split::ALL {
        let n = corpus
            .split_assignment
            .values()
            .filter(|&&s| s == split)
            .count();
        println!("{split}: {n} videos");
    }
    Ok(())
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let corpus = require_corpus(cfg)?;
    if corpus.split_assignment.is_empty() {
        return Err(OscaError::Validation(
            "the corpus has no split assignment; run `osca split` first".into(),
        ));
    }
    let train_set = collect_samples(&corpus, cfg, Some(Split::Train))?;
    let val_set = collect_samples(&corpus, cfg, Some(Split::Val))?;
    println!(
        "training on {} samples, validating on {}",
        train_set.len(),
        val_set.len()
    );
    let mc = model_config_for(cfg, &corpus)?;
    let tc = cfg.train_config();
    let (params, history) = train(
        &train_set,
        &val_set,
        &mc,
        &tc,
        &corpus.vocabulary.fingerprint(),
    )?;

    let ckpt = out.join("checkpoint.ckpt");
    save_checkpoint(&ckpt, &params)?;
    println!("wrote {}", ckpt.display());
    write_artifact(out, "history.csv", &history_csv(&history))?;

    let xs: Vec<f64> = history.iter().map(|r| r.epoch as f64).collect();
    let curves = out.join("curves.png");
    // Series order: train loss, then val loss.
    plot::save_lines(
        &curves,
        &xs,
        &[
            (
                history.iter().map(|r| r.train_loss).collect(),
                plot::SERIES_COLORS[0],
            ),
            (
                history.iter().map(|r| r.val_loss).collect(),
                plot::SERIES_COLORS[1],
            ),
        ],
    )?;
    println!("wrote {}", curves.display());

    let best = history
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .expect("training history is never empty");
    println!(
        "best epoch {}: val_loss {:.6}  val top-1 {:.4}%",
        best.epoch, best.val_loss, best.val_top1
    );
    Ok(())
}

fn confusion_csv(counts: &[[u64; NUM_CLASSES]; NUM_CLASSES]) -> String {
    let mut out = String::from("target\\pred");
    for c in StateChangeClass::ALL {
        out.push(',');
        out.push_str(c.as_str());
    }
    out.push('\n');
    for (i, row) in counts.iter().enumerate() {
        out.push_str(StateChangeClass::ALL[i].as_str());
        for &v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let corpus = require_corpus(cfg)?;
    let split = cfg.eval_split()?;
    let params = load_or_init_params(cfg, &corpus, checkpoint)?;
    let spec = cfg.recognizer_spec()?;
    let (preds, targets) = collect_predictions(&corpus, split, &params, cfg.corpus.window, &spec)?;
    let report = metrics_report(&preds, &targets)?;

    write_artifact(out, "metrics.txt", &report.render())?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_artifact(out, "metrics.json", &json)?;
    write_artifact(out, "confusion.csv", &confusion_csv(&confusion(&preds, &targets)))?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let corpus = require_corpus(cfg)?;
    let split = cfg.eval_split()?;
    let params = load_or_init_params(cfg, &corpus, checkpoint)?;
    let rows = noise_sweep(
        &corpus,
        split,
        &params,
        cfg.corpus.window,
        &cfg.sweep_levels(),
        &cfg.sweep_seeds(),
    )?;
    let csv = sweep_csv(&rows);
    write_artifact(out, "sweep.csv", &csv)?;

    let xs: Vec<f64> = rows.iter().map(|r| r.action_noise).collect();
    let png = out.join("sweep.png");
    // Series order: top-1, top-5, macro F1 over action noise.
    plot::save_lines(
        &png,
        &xs,
        &[
            (rows.iter().map(|r| r.top1_mean).collect(), plot::SERIES_COLORS[0]),
            (rows.iter().map(|r| r.top5_mean).collect(), plot::SERIES_COLORS[1]),
            (rows.iter().map(|r| r.f1_mean).collect(), plot::SERIES_COLORS[2]),
        ],
    )?;
    println!("wrote {}", png.display());
    print!("{csv}");
    Ok(())
}

fn cmd_stats(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let corpus = require_corpus(cfg)?;

    let tm = transition_matrix(&corpus, None);
    write_artifact(out, "transition_counts.csv", &tm.counts_csv())?;
    write_artifact(out, "transition_normalized.csv", &tm.normalized_csv())?;
    let heat = out.join("transitions.png");
    plot::save_heatmap(&heat, &tm.normalized())?;
    println!("wrote {}", heat.display());

    let hist = state_histograms(&corpus);
    write_artifact(out, "verb_state_histogram.csv", &histogram_csv(&hist.verbs))?;
    write_artifact(out, "noun_state_histogram.csv", &histogram_csv(&hist.nouns))?;
    for (name, rows) in [
        ("states_per_verb.csv", &hist.states_per_verb),
        ("states_per_noun.csv", &hist.states_per_noun),
    ] {
        let mut csv = String::from("token,distinct_states\n");
        for (token, n) in rows {
            csv.push_str(&format!("{token},{n}\n"));
        }
        write_artifact(out, name, &csv)?;
    }
    // Bars are indexed by rank; the histogram CSV carries the token names.
    let totals: Vec<f64> = hist
        .verbs
        .iter()
        .take(20)
        .map(|r| r.total() as f64)
        .collect();
    if !totals.is_empty() && totals.iter().any(|&t| t > 0.0) {
        let bars = out.join("verb_totals.png");
        plot::save_bars(&bars, &totals)?;
        println!("wrote {}", bars.display());
    }

    if corpus.videos.iter().any(|v| v.segments.len() >= 2) {
        let priors = class_priors(&corpus, None)?;
        let mut csv = String::from("class,prior\n");
        for (c, p) in StateChangeClass::ALL.iter().zip(priors) {
            csv.push_str(&format!("{c},{p:.6}\n"));
        }
        write_artifact(out, "class_priors.csv", &csv)?;
        let png = out.join("class_priors.png");
        plot::save_bars(&png, &priors)?;
        println!("wrote {}", png.display());
    } else {
        println!("class priors skipped: no video has a second segment");
    }

    println!(
        "videos: {}  segments: {}  transitions: {}",
        corpus.videos.len(),
        corpus.num_segments(),
        tm.total()
    );
    Ok(())
}

fn cmd_compose_check(out: &Path) -> Result<()> {
    let labels = FrameStateLabel::all();
    let mut csv = String::from("pre,post,result\n");
    let mut matched = 0usize;
    let mut inverted = 0usize;
    let mut fallback = 0usize;
    for &pre in &labels {
        for &post in &labels {
            let result = compose_state_change(pre, post);
            csv.push_str(&format!("{pre},{post},{result}\n"));
            if pre.phase() == Phase::Pre && post.phase() == Phase::Post {
                if pre.base() == post.base() {
                    matched += 1;
                    continue;
                }
                if inverse_of(pre.base()) == Some(post.base()) {
                    inverted += 1;
                    continue;
                }
            }
            fallback += 1;
        }
    }
    write_artifact(out, "compose_rules.csv", &csv)?;
    println!(
        "{} label pairs: {} matched pre/post, {} inverse pairs (no_osc), {} fallback",
        labels.len() * labels.len(),
        matched,
        inverted,
        fallback
    );
    Ok(())
}
