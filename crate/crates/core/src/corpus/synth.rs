//! Synthetic procedural-activity generator.
//!
//! State-change sequences follow a first-order Markov chain (initial class
//! from `class_priors`, successors from `transition_matrix` rows). Each class
//! owns a disjoint sub-vocabulary of verbs and nouns, and each segment's
//! action is drawn uniformly from its class's sub-vocabulary. Features blend
//! a fixed unit-norm class center with isotropic noise:
//!
//! ```text
//! x_t = a * center(class) + (1 - a) * eps,   eps ~ N(0, I)
//! ```
//!
//! where `a` is `feature_informativeness`: 0 gives pure noise, 1 gives
//! cleanly separable clusters. Videos are generated from independent RNG
//! streams seeded by (seed, video index), so the corpus is fully determined
//! by the config and any parallel schedule would produce the same result.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OscaError, Result};
use crate::labels::{ActionLabel, LabelVocabulary, StateChangeClass, NUM_CLASSES};
use crate::mix_seed;

use super::{
    ActivityVideo, BoundingBox, Corpus, CriticalFrame, FeatureSequence, FeatureSource, Segment,
};

/// Frames reserved per generated segment.
const SEGMENT_SPAN: u64 = 100;
/// Salt for the per-class feature center streams. Independent of the corpus
/// seed, so corpora of equal dimension share centers.
const CENTER_SALT: u64 = 0x0c5a_11ce_57a7_e5ed;

fn default_steps() -> usize {
    8
}

/// Generator configuration. `segments_per_video` is an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub segments_per_video: (usize, usize),
    pub class_priors: [f64; NUM_CLASSES],
    pub transition_matrix: [[f64; NUM_CLASSES]; NUM_CLASSES],
    pub verbs_per_state: usize,
    pub nouns_per_state: usize,
    pub feature_dim: usize,
    #[serde(default = "default_steps")]
    pub steps_per_segment: usize,
    pub feature_informativeness: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 100,
            segments_per_video: (5, 15),
            class_priors: [1.0 / NUM_CLASSES as f64; NUM_CLASSES],
            transition_matrix: [[1.0 / NUM_CLASSES as f64; NUM_CLASSES]; NUM_CLASSES],
            verbs_per_state: 4,
            nouns_per_state: 4,
            feature_dim: 256,
            steps_per_segment: 8,
            feature_informativeness: 0.5,
            seed: 0,
        }
    }
}

const DIST_TOLERANCE: f64 = 1e-9;

fn check_distribution(row: &[f64; NUM_CLASSES], what: &str, problems: &mut Vec<String>) {
    if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        problems.push(format!("{what} has a negative or non-finite entry"));
        return;
    }
    let sum: f64 = row.iter().sum();
    if sum == 0.0 {
        problems.push(format!("{what} is all zero"));
    } else if (sum - 1.0).abs() > DIST_TOLERANCE {
        problems.push(format!("{what} sums to {sum}, expected 1"));
    }
}

impl SynthConfig {
    /// Validates the whole config, collecting every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_videos == 0 {
            problems.push("num_videos must be at least 1".to_string());
        }
        let (lo, hi) = self.segments_per_video;
        if lo == 0 {
            problems.push("segments_per_video lower bound must be at least 1".to_string());
        }
        if lo > hi {
            problems.push(format!(
                "segments_per_video range ({lo}, {hi}) is inverted"
            ));
        }
        check_distribution(&self.class_priors, "class_priors", &mut problems);
        for (i, row) in self.transition_matrix.iter().enumerate() {
            check_distribution(
                row,
                &format!("transition_matrix row {i} ({})", StateChangeClass::ALL[i]),
                &mut problems,
            );
        }
        if self.verbs_per_state == 0 {
            problems.push("verbs_per_state must be at least 1".to_string());
        }
        if self.nouns_per_state == 0 {
            problems.push("nouns_per_state must be at least 1".to_string());
        }
        if self.feature_dim == 0 {
            problems.push("feature_dim must be at least 1".to_string());
        }
        if self.steps_per_segment == 0 {
            problems.push("steps_per_segment must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.feature_informativeness)
            || !self.feature_informativeness.is_finite()
        {
            problems.push(format!(
                "feature_informativeness {} outside [0, 1]",
                self.feature_informativeness
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(OscaError::Config(problems))
        }
    }

    /// The disjoint per-class verb and noun vocabularies, in class order.
    pub fn vocabulary(&self) -> LabelVocabulary {
        let verbs = (0..NUM_CLASSES)
            .flat_map(|c| {
                let name = StateChangeClass::ALL[c].as_str();
                (0..self.verbs_per_state).map(move |k| format!("{name}_verb_{k}"))
            })
            .collect();
        let nouns = (0..NUM_CLASSES)
            .flat_map(|c| {
                let name = StateChangeClass::ALL[c].as_str();
                (0..self.nouns_per_state).map(move |k| format!("{name}_noun_{k}"))
            })
            .collect();
        LabelVocabulary::new(verbs, nouns).expect("generated names are unique")
    }
}

/// Draws an index from a nonnegative weight vector summing to ~1.
fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64; NUM_CLASSES]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding left u at or above the total mass; take the last nonzero class.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(NUM_CLASSES - 1)
}

/// Unit-norm feature center for one class, a fixed function of (class, D).
fn class_center(class: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(CENTER_SALT, class as u64));
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Generates a corpus from the config. Deterministic: equal configs produce
/// equal corpora, down to the serialized bytes.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let vocabulary = cfg.vocabulary();
    let centers: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|c| class_center(c, cfg.feature_dim))
        .collect();
    let width = (cfg.num_videos.max(2) - 1).ilog10() as usize + 1;

    let videos = (0..cfg.num_videos)
        .map(|vi| generate_video(cfg, &centers, vi, width))
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(vocabulary, videos)
}

fn generate_video(
    cfg: &SynthConfig,
    centers: &[Vec<f64>],
    video_index: usize,
    id_width: usize,
) -> Result<ActivityVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, video_index as u64));
    let (lo, hi) = cfg.segments_per_video;
    let n_segments = rng.random_range(lo..=hi);
    let video_id = format!("synth_{video_index:0id_width$}");

    let mut segments = Vec::with_capacity(n_segments);
    let mut features = Vec::with_capacity(n_segments);
    let mut prev_class: Option<usize> = None;
    for si in 0..n_segments {
        // Draw order per segment: class, verb, noun, pnr offset, then T*D
        // noise values. Changing this order changes every corpus.
        let class_idx = match prev_class {
            None => sample_categorical(&mut rng, &cfg.class_priors),
            Some(p) => sample_categorical(&mut rng, &cfg.transition_matrix[p]),
        };
        prev_class = Some(class_idx);
        let class = StateChangeClass::ALL[class_idx];

        let verb = class_idx * cfg.verbs_per_state + rng.random_range(0..cfg.verbs_per_state);
        let noun = class_idx * cfg.nouns_per_state + rng.random_range(0..cfg.nouns_per_state);

        let start = si as u64 * SEGMENT_SPAN;
        let end = start + SEGMENT_SPAN - 1;
        let pnr = start + rng.random_range(10..=90);
        let no_osc = class == StateChangeClass::NoOsc;
        let make_frame = |idx: u64| CriticalFrame {
            frame_index: idx,
            object_class: noun,
            bbox: BoundingBox { x: 20.0, y: 20.0, w: 30.0, h: 30.0 },
            occluded: false,
        };
        segments.push(Segment {
            segment_id: format!("{video_id}_s{si}"),
            start_frame: start,
            end_frame: end,
            pnr_frame: pnr,
            action: ActionLabel::new(verb, noun),
            state_change: class,
            pre_frame: (!no_osc).then(|| make_frame(start + 1)),
            post_frame: (!no_osc).then(|| make_frame(end - 1)),
        });

        let alpha = cfg.feature_informativeness;
        let center = &centers[class_idx];
        let mut values = Array2::zeros((cfg.steps_per_segment, cfg.feature_dim));
        for t in 0..cfg.steps_per_segment {
            for d in 0..cfg.feature_dim {
                let eps: f64 = rng.sample(StandardNormal);
                let x = alpha * center[d] + (1.0 - alpha) * eps;
                // Materialize at on-disk (f32) precision so save/load is exact.
                values[[t, d]] = x as f32 as f64;
            }
        }
        features.push(FeatureSequence::new(values, FeatureSource::Synthetic)?);
    }

    Ok(ActivityVideo {
        video_id,
        segments,
        features,
    })
}
