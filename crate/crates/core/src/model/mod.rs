//! The three-stream anticipation network and its training loop.
//!
//! Three encoders produce fixed-size representations: a visual encoder over
//! the recent feature window, an action-history encoder embedding verbs and
//! nouns through disjoint tables, and a state-history encoder over the nine
//! state-change classes. Each is a bidirectional LSTM followed by an MLP. A
//! fusion head concatenates the enabled stream outputs and classifies into
//! the nine classes. All math runs in f64; gradients are hand-derived and
//! checked against finite differences in the test suite.

mod checkpoint;
mod layers;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{
    encode_action_history, encode_state_history, encode_visual, forward_sample, fuse_predict,
    loss_and_gradients, predict, ModelParams, OovPolicy, RecognizedHistories,
};
pub use train::{history_csv, train, Adam, EpochStats};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OscaError, Result};
use crate::labels::{LabelVocabulary, StateChangeClass, NUM_CLASSES};

/// Probabilities are clamped to at least this value before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Which input streams a model consumes. Variants with fewer streams are
/// separately trained models, not masked versions of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSet {
    pub visual: bool,
    pub action: bool,
    pub state: bool,
}

impl StreamSet {
    pub const ALL: StreamSet = StreamSet { visual: true, action: true, state: true };

    pub fn any(self) -> bool {
        self.visual || self.action || self.state
    }
}

impl Default for StreamSet {
    fn default() -> Self {
        StreamSet::ALL
    }
}

impl fmt::Display for StreamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.visual {
            parts.push("vid");
        }
        if self.action {
            parts.push("action");
        }
        if self.state {
            parts.push("state");
        }
        f.write_str(&parts.join(","))
    }
}

impl FromStr for StreamSet {
    type Err = OscaError;

    /// Parses a comma-separated subset of `vid,action,state`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = StreamSet { visual: false, action: false, state: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "vid" => set.visual = true,
                "action" => set.action = true,
                "state" => set.state = true,
                other => {
                    return Err(OscaError::Validation(format!(
                        "unknown stream '{other}' (expected vid, action or state)"
                    )))
                }
            }
        }
        if !set.any() {
            return Err(OscaError::Validation(
                "at least one stream must be enabled".into(),
            ));
        }
        Ok(set)
    }
}

/// Sizes of one stream encoder. `embedding_dim` matters only for the lexical
/// streams; the visual stream reads feature rows directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden_size: usize,
    pub mlp_sizes: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_size: 128,
            mlp_sizes: vec![128],
            embedding_dim: 64,
        }
    }
}

impl EncoderConfig {
    /// Output width of this encoder: the last MLP layer, or the raw
    /// bidirectional hidden width when the MLP is empty.
    pub fn out_dim(&self) -> usize {
        self.mlp_sizes.last().copied().unwrap_or(2 * self.hidden_size)
    }

    fn check(&self, name: &str, problems: &mut Vec<String>) {
        if self.hidden_size == 0 {
            problems.push(format!("{name}: hidden_size must be at least 1"));
        }
        if self.embedding_dim == 0 {
            problems.push(format!("{name}: embedding_dim must be at least 1"));
        }
        if self.mlp_sizes.iter().any(|&s| s == 0) {
            problems.push(format!("{name}: mlp_sizes entries must be at least 1"));
        }
    }
}

/// Full model shape. `num_verbs`/`num_nouns` are the vocabulary sizes the
/// embedding tables are built for (each table carries one extra reserved row
/// for unknown tokens at inference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub streams: StreamSet,
    pub visual: EncoderConfig,
    pub action: EncoderConfig,
    pub state: EncoderConfig,
    /// Fusion head widths; the last entry must be the number of classes.
    pub fusion_mlp: Vec<usize>,
    pub feature_dim: usize,
    pub num_verbs: usize,
    pub num_nouns: usize,
}

impl ModelConfig {
    /// Default-shaped model bound to a corpus: D from the corpus, vocabulary
    /// sizes from `vocab`.
    pub fn for_corpus(feature_dim: usize, vocab: &LabelVocabulary) -> Self {
        ModelConfig {
            streams: StreamSet::ALL,
            visual: EncoderConfig::default(),
            action: EncoderConfig::default(),
            state: EncoderConfig::default(),
            fusion_mlp: vec![256, NUM_CLASSES],
            feature_dim,
            num_verbs: vocab.num_verbs(),
            num_nouns: vocab.num_nouns(),
        }
    }

    /// Width of the concatenated fusion input.
    pub fn fusion_in_dim(&self) -> usize {
        let mut dim = 0;
        if self.streams.visual {
            dim += self.visual.out_dim();
        }
        if self.streams.action {
            dim += self.action.out_dim();
        }
        if self.streams.state {
            dim += self.state.out_dim();
        }
        dim
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !self.streams.any() {
            problems.push("at least one stream must be enabled".to_string());
        }
        self.visual.check("visual encoder", &mut problems);
        self.action.check("action encoder", &mut problems);
        self.state.check("state encoder", &mut problems);
        match self.fusion_mlp.last() {
            None => problems.push("fusion_mlp must have at least one layer".to_string()),
            Some(&last) if last != NUM_CLASSES => problems.push(format!(
                "fusion_mlp must end in {NUM_CLASSES} outputs, got {last}"
            )),
            _ => {}
        }
        if self.fusion_mlp.iter().any(|&s| s == 0) {
            problems.push("fusion_mlp entries must be at least 1".to_string());
        }
        if self.streams.visual && self.feature_dim == 0 {
            problems.push("feature_dim must be at least 1".to_string());
        }
        if self.streams.action && (self.num_verbs == 0 || self.num_nouns == 0) {
            problems.push("action stream needs nonempty verb and noun vocabularies".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OscaError::Config(problems))
        }
    }
}

/// A probability vector over the nine classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDistribution {
    probs: [f64; NUM_CLASSES],
}

impl PredictionDistribution {
    /// Validates range and normalization (sum within 1e-6 of 1).
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        if probs.iter().any(|&p| !(0.0..=1.0).contains(&p) || !p.is_finite()) {
            return Err(OscaError::Validation(format!(
                "probabilities outside [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(OscaError::Validation(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(PredictionDistribution { probs })
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.len() != NUM_CLASSES {
            return Err(OscaError::Shape(format!(
                "expected {NUM_CLASSES} logits, got {}",
                logits.len()
            )));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = [0.0; NUM_CLASSES];
        let mut sum = 0.0;
        for (p, &l) in probs.iter_mut().zip(logits) {
            *p = (l - max).exp();
            sum += *p;
        }
        for p in &mut probs {
            *p /= sum;
        }
        Ok(PredictionDistribution { probs })
    }

    pub fn uniform() -> Self {
        PredictionDistribution {
            probs: [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
        }
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.probs
    }

    pub fn prob(&self, class: StateChangeClass) -> f64 {
        self.probs[class.index()]
    }

    /// Highest-probability class; ties resolve to the lowest class index.
    pub fn argmax(&self) -> StateChangeClass {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        StateChangeClass::from_index(best).unwrap()
    }

    /// Class indices ordered by descending probability; equal probabilities
    /// keep ascending class index order.
    pub fn ranking(&self) -> [usize; NUM_CLASSES] {
        let mut idx = [0usize; NUM_CLASSES];
        for (i, slot) in idx.iter_mut().enumerate() {
            *slot = i;
        }
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Mean cross-entropy of predictions against one-hot targets, with the
/// predicted probability clamped below by [`PROB_CLAMP`].
pub fn loss(preds: &[PredictionDistribution], targets: &[StateChangeClass]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(OscaError::Validation(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(OscaError::Validation("loss of an empty batch".into()));
    }
    let total: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, &t)| -p.prob(t).max(PROB_CLAMP).ln())
        .sum();
    Ok(total / preds.len() as f64)
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            problems.push(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OscaError::Config(problems))
        }
    }
}
