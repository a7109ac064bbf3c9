//! History sources for inference: ground-truth pass-through, uniform label
//! corruption, and a rule-based composer that derives a state change from
//! two per-frame state predictions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ActivityVideo, DecisionSample};
use crate::error::{OscaError, Result};
use crate::labels::{
    frame_label, inverse_of, ActionLabel, FrameStateLabel, LabelVocabulary, Phase,
    StateChangeClass,
};
use crate::model::RecognizedHistories;
use crate::{fnv1a, mix_seed};

/// Corruption rates for the two lexical histories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub action_rate: f64,
    pub state_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [("action_rate", self.action_rate), ("state_rate", self.state_rate)] {
            if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
                return Err(OscaError::Validation(format!(
                    "{name} must lie in [0, 1], got {rate}"
                )));
            }
        }
        Ok(())
    }
}

/// One frame classifier output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePrediction {
    pub label: FrameStateLabel,
    pub confidence: Option<f64>,
}

/// Which source fills the histories handed to the model at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecognizerSpec {
    /// Ground truth.
    Oracle,
    /// Ground truth with uniform token corruption.
    Noisy(NoiseSpec),
    /// State history rebuilt by the two-frame rule composer from simulated
    /// frame classifiers with the given accuracies; actions stay ground
    /// truth.
    Composed {
        accuracy_pre: f64,
        accuracy_post: f64,
        seed: u64,
    },
}

impl RecognizerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RecognizerSpec::Oracle => Ok(()),
            RecognizerSpec::Noisy(ns) => ns.validate(),
            RecognizerSpec::Composed { accuracy_pre, accuracy_post, .. } => {
                for (name, acc) in [("accuracy_pre", *accuracy_pre), ("accuracy_post", *accuracy_post)] {
                    if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
                        return Err(OscaError::Validation(format!(
                            "{name} must lie in [0, 1], got {acc}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for RecognizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecognizerSpec::Oracle => f.write_str("oracle"),
            RecognizerSpec::Noisy(ns) => {
                write!(f, "noisy({},{},{})", ns.action_rate, ns.state_rate, ns.seed)
            }
            RecognizerSpec::Composed { accuracy_pre, accuracy_post, seed } => {
                write!(f, "composed({accuracy_pre},{accuracy_post},{seed})")
            }
        }
    }
}

impl FromStr for RecognizerSpec {
    type Err = OscaError;

    /// Parses `oracle`, `noisy(action_rate,state_rate,seed)` or
    /// `composed(accuracy_pre,accuracy_post,seed)`.
    fn from_str(s: &str) -> Result<Self> {
        fn args3(body: &str, what: &str) -> Result<(f64, f64, u64)> {
            let parts: Vec<&str> = body.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(OscaError::Config(vec![format!(
                    "{what} takes 3 arguments, got {}",
                    parts.len()
                )]));
            }
            let a: f64 = parts[0].parse().map_err(|_| {
                OscaError::Config(vec![format!("{what}: '{}' is not a number", parts[0])])
            })?;
            let b: f64 = parts[1].parse().map_err(|_| {
                OscaError::Config(vec![format!("{what}: '{}' is not a number", parts[1])])
            })?;
            let seed: u64 = parts[2].parse().map_err(|_| {
                OscaError::Config(vec![format!("{what}: '{}' is not a seed", parts[2])])
            })?;
            Ok((a, b, seed))
        }

        let s = s.trim();
        let spec = if s == "oracle" {
            RecognizerSpec::Oracle
        } else if let Some(body) = s.strip_prefix("noisy(").and_then(|r| r.strip_suffix(')')) {
            let (action_rate, state_rate, seed) = args3(body, "noisy")?;
            RecognizerSpec::Noisy(NoiseSpec { action_rate, state_rate, seed })
        } else if let Some(body) = s.strip_prefix("composed(").and_then(|r| r.strip_suffix(')')) {
            let (accuracy_pre, accuracy_post, seed) = args3(body, "composed")?;
            RecognizerSpec::Composed { accuracy_pre, accuracy_post, seed }
        } else {
            return Err(OscaError::Config(vec![format!(
                "unknown recognizer '{s}' (expected oracle, noisy(a,s,seed) or composed(p,q,seed))"
            )]));
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// The sample's own histories, untouched.
pub fn oracle_histories(sample: &DecisionSample) -> RecognizedHistories {
    RecognizedHistories {
        action_history: sample.action_history.clone(),
        state_history: sample.state_history.clone(),
    }
}

/// Independently corrupts each token with probability `rate`, replacing it
/// by a uniform draw over the other `vocab` entries, so `rate` is also the
/// expected error rate. A zero rate returns the input without touching the
/// rng.
pub fn corrupt_history<T: Clone + PartialEq>(
    tokens: &[T],
    rate: f64,
    vocab: &[T],
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    if !rate.is_finite() || !(0.0..=1.0).contains(&rate) {
        return Err(OscaError::Validation(format!(
            "corruption rate must lie in [0, 1], got {rate}"
        )));
    }
    if rate == 0.0 {
        return Ok(tokens.to_vec());
    }
    if vocab.len() < 2 {
        return Err(OscaError::Validation(format!(
            "cannot corrupt over a vocabulary of {} label(s); no wrong label exists",
            vocab.len()
        )));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for token in tokens {
        if rng.random::<f64>() < rate {
            let original = vocab.iter().position(|v| v == token).ok_or_else(|| {
                OscaError::Validation(
                    "token to corrupt is not in the given vocabulary".into(),
                )
            })?;
            let mut pick = rng.random_range(0..vocab.len() - 1);
            if pick >= original {
                pick += 1;
            }
            out.push(vocab[pick].clone());
        } else {
            out.push(token.clone());
        }
    }
    Ok(out)
}

/// Derives a segment's state change from the predictions for its pre and
/// post frames.
///
/// If the pair reads `pre_x` then `post_x`, the change is `x`. If it reads
/// `pre_x` then `post_y` with `y` the inverse of `x`, the object ended where
/// it started and the change is `no_osc`. Every other pair falls back to the
/// base class of the second prediction, whatever its phase.
pub fn compose_state_change(pre_pred: FrameStateLabel, post_pred: FrameStateLabel) -> StateChangeClass {
    if pre_pred.phase() == Phase::Pre && post_pred.phase() == Phase::Post {
        if pre_pred.base() == post_pred.base() {
            return pre_pred.base();
        }
        if inverse_of(pre_pred.base()) == Some(post_pred.base()) {
            return StateChangeClass::NoOsc;
        }
    }
    post_pred.base()
}

/// All (verb, noun) pairs of a vocabulary, verb-major. This is the label
/// space action corruption draws from.
pub fn action_pairs(vocab: &LabelVocabulary) -> Vec<ActionLabel> {
    let mut pairs = Vec::with_capacity(vocab.num_verbs() * vocab.num_nouns());
    for v in 0..vocab.num_verbs() {
        for n in 0..vocab.num_nouns() {
            pairs.push(ActionLabel::new(v, n));
        }
    }
    pairs
}

fn wrong_frame_label(correct: FrameStateLabel, rng: &mut impl Rng) -> FrameStateLabel {
    let all = FrameStateLabel::all();
    let original = all.iter().position(|&l| l == correct).expect("label set");
    let mut pick = rng.random_range(0..all.len() - 1);
    if pick >= original {
        pick += 1;
    }
    all[pick]
}

/// Simulates the two frame classifiers for one segment and composes their
/// predictions. Draw order per segment: base class for no_osc segments, the
/// pre coin, the wrong pre label if needed, then the post coin and wrong
/// post label.
fn composed_state(
    truth: StateChangeClass,
    accuracy_pre: f64,
    accuracy_post: f64,
    rng: &mut impl Rng,
) -> StateChangeClass {
    // A segment without a state change has no frame labels of its own; model
    // it as an object seen mid round trip, so correct classifiers read
    // pre_x then post_inverse(x), which composes back to no_osc.
    let (true_pre, true_post) = if truth == StateChangeClass::NoOsc {
        let invertible: Vec<StateChangeClass> = StateChangeClass::CHANGES
            .iter()
            .copied()
            .filter(|&c| inverse_of(c).is_some())
            .collect();
        let base = invertible[rng.random_range(0..invertible.len())];
        (
            frame_label(Phase::Pre, base).expect("invertible base"),
            frame_label(Phase::Post, inverse_of(base).expect("invertible")).expect("inverse base"),
        )
    } else {
        (
            frame_label(Phase::Pre, truth).expect("state change"),
            frame_label(Phase::Post, truth).expect("state change"),
        )
    };
    let pre_pred = if rng.random::<f64>() < accuracy_pre {
        true_pre
    } else {
        wrong_frame_label(true_pre, rng)
    };
    let post_pred = if rng.random::<f64>() < accuracy_post {
        true_post
    } else {
        wrong_frame_label(true_post, rng)
    };
    compose_state_change(pre_pred, post_pred)
}

/// Histories for every decision point of a video, from the chosen source.
///
/// Entry `j` serves the decision after segment `j+1` and holds tokens for
/// the first `j+1` segments. A video with fewer than two segments has no
/// decision points and yields an empty list. Corruption is sampled once per
/// (video, spec seed), so overlapping prefixes agree token for token and a
/// rerun reproduces the same histories.
pub fn recognized_histories(
    video: &ActivityVideo,
    spec: &RecognizerSpec,
    vocab: &LabelVocabulary,
) -> Result<Vec<RecognizedHistories>> {
    spec.validate()?;
    if video.segments.len() < 2 {
        return Ok(Vec::new());
    }
    let observed = &video.segments[..video.segments.len() - 1];
    let mut actions: Vec<ActionLabel> = observed.iter().map(|s| s.action).collect();
    let mut states: Vec<StateChangeClass> = observed.iter().map(|s| s.state_change).collect();

    match spec {
        RecognizerSpec::Oracle => {}
        RecognizerSpec::Noisy(ns) => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(ns.seed, fnv1a(&video.video_id)));
            let pairs = action_pairs(vocab);
            actions = corrupt_history(&actions, ns.action_rate, &pairs, &mut rng)?;
            states = corrupt_history(&states, ns.state_rate, &StateChangeClass::ALL, &mut rng)?;
        }
        RecognizerSpec::Composed { accuracy_pre, accuracy_post, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(*seed, fnv1a(&video.video_id)));
            states = states
                .iter()
                .map(|&truth| composed_state(truth, *accuracy_pre, *accuracy_post, &mut rng))
                .collect();
        }
    }

    Ok((0..observed.len())
        .map(|j| RecognizedHistories {
            action_history: actions[..=j].to_vec(),
            state_history: states[..=j].to_vec(),
        })
        .collect())
}
