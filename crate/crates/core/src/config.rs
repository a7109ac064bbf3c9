//! Experiment configuration.
//!
//! One TOML file drives every subcommand. Each pipeline stage has its own
//! section; a top-level `seed` is the fallback for every section that does
//! not pin its own. Validation collects all problems in one pass so a bad
//! file is fixed in one round trip, and every run can serialize the fully
//! resolved configuration next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Split, SynthConfig};
use crate::error::{OscaError, Result};
use crate::labels::NUM_CLASSES;
use crate::model::{EncoderConfig, ModelConfig, StreamSet, TrainConfig};
use crate::recognizers::RecognizerSpec;

/// Name of the resolved-config artifact written next to command outputs.
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Fallback seed for sections without an explicit one.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub output: OutputSection,
    pub synth: SynthSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub recognizer: RecognizerSection,
    pub sweep: SweepSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusSection::default(),
            output: OutputSection::default(),
            synth: SynthSection::default(),
            split: SplitSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            recognizer: RecognizerSection::default(),
            sweep: SweepSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Corpus JSONL path; commands that read a corpus require it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Visual window W: feature rows of the last W observed segments.
    pub window: usize,
    /// Cap on history length for training samples; evaluation always uses
    /// the full history. Unset means no cap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_history: Option<usize>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { path: None, window: 1, max_history: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("osca-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_videos: usize,
    /// Inclusive [lo, hi] range of segments per video.
    pub segments_per_video: [usize; 2],
    pub verbs_per_state: usize,
    pub nouns_per_state: usize,
    pub feature_dim: usize,
    pub steps_per_segment: usize,
    pub feature_informativeness: f64,
    /// Nine per-class probabilities; unset means uniform.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_priors: Option<Vec<f64>>,
    /// 9x9 row-stochastic matrix; unset means uniform rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition_matrix: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            num_videos: 100,
            segments_per_video: [5, 15],
            verbs_per_state: 4,
            nouns_per_state: 4,
            feature_dim: 256,
            steps_per_segment: 8,
            feature_informativeness: 0.5,
            class_priors: None,
            transition_matrix: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Train, val and test fractions; must be positive and sum to 1.
    pub ratios: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { ratios: [0.7, 0.15, 0.15], seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Comma-separated subset of `vid,action,state`.
    pub streams: String,
    /// Per-direction LSTM width shared by all enabled encoders.
    pub hidden_size: usize,
    pub embedding_dim: usize,
    /// Post-LSTM MLP widths shared by all enabled encoders.
    pub mlp: Vec<usize>,
    /// Fusion head widths; the last entry must be 9.
    pub fusion_mlp: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            streams: StreamSet::ALL.to_string(),
            hidden_size: 128,
            embedding_dim: 64,
            mlp: vec![128],
            fusion_mlp: vec![256, NUM_CLASSES],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { batch_size: 32, learning_rate: 1e-4, epochs: 50, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerSection {
    /// `oracle`, `noisy(a,s,seed)` or `composed(p,q,seed)`.
    pub spec: String,
}

impl Default for RecognizerSection {
    fn default() -> Self {
        RecognizerSection { spec: "oracle".to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// (action_rate, state_rate) pairs, one sweep row each.
    pub levels: Vec<[f64; 2]>,
    /// Recognizer seeds averaged per level; unset means seed..seed+2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            levels: vec![[0.0, 0.0], [0.25, 0.25], [0.5, 0.5], [0.75, 0.75]],
            seeds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// `train`, `val`, `test` or `all`.
    pub split: String,
    /// Checkpoint to evaluate; unset means a freshly initialized model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { split: "test".to_string(), checkpoint: None }
    }
}

/// Flattens an error into a problem list, reusing inner config lists.
fn push_problems(problems: &mut Vec<String>, section: &str, err: OscaError) {
    match err {
        OscaError::Config(list) => {
            problems.extend(list.into_iter().map(|p| format!("{section}: {p}")));
        }
        other => problems.push(format!("{section}: {other}")),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| OscaError::Config(vec![format!("{}: {e}", path.display())]))?;
        toml::from_str(&text)
            .map_err(|e| OscaError::Config(vec![format!("{}: {e}", path.display())]))
    }

    /// Checks every section and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.corpus.window == 0 {
            problems.push("corpus: window must be at least 1".to_string());
        }
        if self.corpus.max_history == Some(0) {
            problems.push("corpus: max_history must be at least 1 when set".to_string());
        }
        match self.synth_config() {
            Ok(sc) => {
                if let Err(e) = sc.validate() {
                    push_problems(&mut problems, "synth", e);
                }
            }
            Err(e) => push_problems(&mut problems, "synth", e),
        }
        for (name, r) in ["train", "val", "test"].iter().zip(self.split.ratios) {
            if !(r > 0.0) || !r.is_finite() {
                problems.push(format!("split: {name} ratio must be positive, got {r}"));
            }
        }
        let sum: f64 = self.split.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            problems.push(format!("split: ratios must sum to 1, got {sum}"));
        }
        // Width checks reuse the model validator on a stand-in feature dim
        // (the real one comes from the corpus at run time); an unparsable
        // streams string is reported but does not mask the width checks.
        let streams = match StreamSet::from_str(&self.model.streams) {
            Ok(s) => s,
            Err(e) => {
                push_problems(&mut problems, "model", e);
                StreamSet::ALL
            }
        };
        if let Err(e) = self.model_config_with(streams, 1, 1, 1).validate() {
            push_problems(&mut problems, "model", e);
        }
        if let Err(e) = self.train_config().validate() {
            push_problems(&mut problems, "train", e);
        }
        if let Err(e) = self.recognizer_spec() {
            push_problems(&mut problems, "recognizer", e);
        }
        if self.sweep.levels.is_empty() {
            problems.push("sweep: at least one noise level is required".to_string());
        }
        for (i, [a, s]) in self.sweep.levels.iter().enumerate() {
            for (what, r) in [("action", a), ("state", s)] {
                if !r.is_finite() || !(0.0..=1.0).contains(r) {
                    problems.push(format!(
                        "sweep: level {i} {what} rate must lie in [0, 1], got {r}"
                    ));
                }
            }
        }
        if self.sweep.seeds.as_deref() == Some(&[]) {
            problems.push("sweep: seeds must be non-empty when set".to_string());
        }
        if let Err(e) = self.eval_split() {
            push_problems(&mut problems, "eval", e);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OscaError::Config(problems))
        }
    }

    /// The generator config with priors, transitions and seed resolved.
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = &self.synth;
        let class_priors = match &s.class_priors {
            None => [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
            Some(v) => <[f64; NUM_CLASSES]>::try_from(v.as_slice()).map_err(|_| {
                OscaError::Config(vec![format!(
                    "class_priors needs {NUM_CLASSES} entries, got {}",
                    v.len()
                )])
            })?,
        };
        let transition_matrix = match &s.transition_matrix {
            None => [[1.0 / NUM_CLASSES as f64; NUM_CLASSES]; NUM_CLASSES],
            Some(rows) => {
                if rows.len() != NUM_CLASSES {
                    return Err(OscaError::Config(vec![format!(
                        "transition_matrix needs {NUM_CLASSES} rows, got {}",
                        rows.len()
                    )]));
                }
                let mut m = [[0.0; NUM_CLASSES]; NUM_CLASSES];
                for (i, row) in rows.iter().enumerate() {
                    m[i] = <[f64; NUM_CLASSES]>::try_from(row.as_slice()).map_err(|_| {
                        OscaError::Config(vec![format!(
                            "transition_matrix row {i} needs {NUM_CLASSES} entries, got {}",
                            row.len()
                        )])
                    })?;
                }
                m
            }
        };
        Ok(SynthConfig {
            num_videos: s.num_videos,
            segments_per_video: (s.segments_per_video[0], s.segments_per_video[1]),
            class_priors,
            transition_matrix,
            verbs_per_state: s.verbs_per_state,
            nouns_per_state: s.nouns_per_state,
            feature_dim: s.feature_dim,
            steps_per_segment: s.steps_per_segment,
            feature_informativeness: s.feature_informativeness,
            seed: s.seed.unwrap_or(self.seed),
        })
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        let [t, v, e] = self.split.ratios;
        (t, v, e)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    /// The model config for a corpus with the given dimensions.
    pub fn model_config(
        &self,
        feature_dim: usize,
        num_verbs: usize,
        num_nouns: usize,
    ) -> Result<ModelConfig> {
        let streams = StreamSet::from_str(&self.model.streams)?;
        Ok(self.model_config_with(streams, feature_dim, num_verbs, num_nouns))
    }

    fn model_config_with(
        &self,
        streams: StreamSet,
        feature_dim: usize,
        num_verbs: usize,
        num_nouns: usize,
    ) -> ModelConfig {
        let m = &self.model;
        let encoder = EncoderConfig {
            hidden_size: m.hidden_size,
            mlp_sizes: m.mlp.clone(),
            embedding_dim: m.embedding_dim,
        };
        ModelConfig {
            streams,
            visual: encoder.clone(),
            action: encoder.clone(),
            state: encoder,
            fusion_mlp: m.fusion_mlp.clone(),
            feature_dim,
            num_verbs,
            num_nouns,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            seed: self.train.seed.unwrap_or(self.seed),
        }
    }

    pub fn recognizer_spec(&self) -> Result<RecognizerSpec> {
        RecognizerSpec::from_str(&self.recognizer.spec)
    }

    pub fn sweep_levels(&self) -> Vec<(f64, f64)> {
        self.sweep.levels.iter().map(|[a, s]| (*a, *s)).collect()
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        match &self.sweep.seeds {
            Some(s) => s.clone(),
            None => (0..3).map(|i| self.seed.wrapping_add(i)).collect(),
        }
    }

    /// `None` stands for the whole corpus (`all`).
    pub fn eval_split(&self) -> Result<Option<Split>> {
        if self.eval.split == "all" {
            Ok(None)
        } else {
            Split::from_str(&self.eval.split).map(Some)
        }
    }

    /// Serializes the fully resolved config into `dir`, creating it first.
    pub fn save_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| OscaError::Format(format!("config serialization: {e}")))?;
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, text)?;
        Ok(path)
    }
}
