//! Corpus data model: videos of annotated segments with per-segment feature
//! matrices, deterministic splits, and decision-sample construction.
//!
//! A decision point sits at the onset of segment n+1 of a video. The sample
//! built for it sees the feature windows of the last `W` observed segments
//! plus the full action and state histories of segments 1..n, and its target
//! is the state change of the still unobserved segment n+1.

mod io;
mod split;
mod synth;

pub use io::{load_corpus, save_corpus, sidecar_path};
pub use split::split_corpus;
pub use synth::{generate_synthetic, SynthConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{OscaError, Result};
use crate::labels::{ActionLabel, LabelVocabulary, StateChangeClass, NUM_CLASSES};

/// Axis-aligned box in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// One annotated critical frame: the object of change, its box, and whether
/// the object is occluded in that frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalFrame {
    pub frame_index: u64,
    pub object_class: usize,
    pub bbox: BoundingBox,
    pub occluded: bool,
}

impl CriticalFrame {
    pub fn box_area(&self) -> f64 {
        self.bbox.area()
    }
}

/// One action interval of a video.
///
/// `pre_frame`/`post_frame` are absent only for segments without a state
/// change, which carry no state endpoints to annotate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub start_frame: u64,
    pub end_frame: u64,
    pub pnr_frame: u64,
    pub action: ActionLabel,
    pub state_change: StateChangeClass,
    pub pre_frame: Option<CriticalFrame>,
    pub post_frame: Option<CriticalFrame>,
}

impl Segment {
    /// Frame-range invariants: start ≤ end always, and start ≤ pnr ≤ end for
    /// state-changing segments. Critical frames must lie within the segment.
    pub fn validate(&self) -> Result<()> {
        if self.start_frame > self.end_frame {
            return Err(OscaError::Validation(format!(
                "segment '{}': start frame {} after end frame {}",
                self.segment_id, self.start_frame, self.end_frame
            )));
        }
        if self.state_change != StateChangeClass::NoOsc
            && !(self.start_frame <= self.pnr_frame && self.pnr_frame <= self.end_frame)
        {
            return Err(OscaError::Validation(format!(
                "segment '{}': pnr frame {} outside [{}, {}]",
                self.segment_id, self.pnr_frame, self.start_frame, self.end_frame
            )));
        }
        for frame in [&self.pre_frame, &self.post_frame].into_iter().flatten() {
            if frame.frame_index < self.start_frame || frame.frame_index > self.end_frame {
                return Err(OscaError::Validation(format!(
                    "segment '{}': critical frame {} outside [{}, {}]",
                    self.segment_id, frame.frame_index, self.start_frame, self.end_frame
                )));
            }
            if frame.bbox.w < 0.0 || frame.bbox.h < 0.0 {
                return Err(OscaError::Validation(format!(
                    "segment '{}': negative box extent at frame {}",
                    self.segment_id, frame.frame_index
                )));
            }
        }
        Ok(())
    }
}

/// Where a feature matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    PrecomputedFile,
    Synthetic,
}

/// A T×D matrix of per-step features for one segment.
///
/// Values are held as f64 for numeric work but are always exactly
/// representable as f32 (the on-disk precision), so save/load round-trips are
/// lossless. Equality compares values only; `source` is provenance metadata.
#[derive(Debug, Clone)]
pub struct FeatureSequence {
    values: Array2<f64>,
    source: FeatureSource,
}

impl FeatureSequence {
    pub fn new(values: Array2<f64>, source: FeatureSource) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(OscaError::Validation(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(OscaError::Validation(format!(
                "feature matrix contains non-finite value {bad}"
            )));
        }
        Ok(FeatureSequence { values, source })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Temporal steps (rows).
    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    /// Feature dimension (columns).
    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }
}

impl PartialEq for FeatureSequence {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values
    }
}

/// A video: ordered segments plus one feature sequence per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityVideo {
    pub video_id: String,
    pub segments: Vec<Segment>,
    pub features: Vec<FeatureSequence>,
}

impl ActivityVideo {
    pub fn validate(&self) -> Result<()> {
        if self.segments.len() != self.features.len() {
            return Err(OscaError::Validation(format!(
                "video '{}': {} segments but {} feature sequences",
                self.video_id,
                self.segments.len(),
                self.features.len()
            )));
        }
        let mut last_start = None;
        for seg in &self.segments {
            seg.validate()?;
            if let Some(prev) = last_start {
                if seg.start_frame < prev {
                    return Err(OscaError::Validation(format!(
                        "video '{}': segments not ordered by start frame at '{}'",
                        self.video_id, seg.segment_id
                    )));
                }
            }
            last_start = Some(seg.start_frame);
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }
}

/// Split membership of a video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = OscaError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| OscaError::Domain(format!("unknown split '{s}'")))
    }
}

/// An ordered collection of videos with a shared vocabulary and an optional
/// video-level split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: LabelVocabulary,
    pub videos: Vec<ActivityVideo>,
    pub split_assignment: BTreeMap<String, Split>,
}

impl Corpus {
    pub fn new(vocabulary: LabelVocabulary, videos: Vec<ActivityVideo>) -> Result<Self> {
        let corpus = Corpus {
            vocabulary,
            videos,
            split_assignment: BTreeMap::new(),
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Full structural validation: per-video checks, label resolution, a
    /// constant feature dimension, unique video ids, and split coverage.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        let mut dim: Option<(usize, String)> = None;
        for video in &self.videos {
            if !ids.insert(video.video_id.as_str()) {
                return Err(OscaError::Validation(format!(
                    "duplicate video id '{}'",
                    video.video_id
                )));
            }
            video.validate()?;
            for seg in &video.segments {
                if !self.vocabulary.contains_action(seg.action) {
                    return Err(OscaError::Validation(format!(
                        "segment '{}' of video '{}': action ({}, {}) outside vocabulary ({} verbs, {} nouns)",
                        seg.segment_id,
                        video.video_id,
                        seg.action.verb_id,
                        seg.action.noun_id,
                        self.vocabulary.num_verbs(),
                        self.vocabulary.num_nouns()
                    )));
                }
            }
            for feat in &video.features {
                match &dim {
                    Some((d, first)) if *d != feat.dim() => {
                        return Err(OscaError::Validation(format!(
                            "feature dimension mismatch: video '{}' has D={}, video '{}' has D={}",
                            first,
                            d,
                            video.video_id,
                            feat.dim()
                        )));
                    }
                    None => dim = Some((feat.dim(), video.video_id.clone())),
                    _ => {}
                }
            }
        }
        if !self.split_assignment.is_empty() {
            for id in self.split_assignment.keys() {
                if !ids.contains(id.as_str()) {
                    return Err(OscaError::Validation(format!(
                        "split assignment references unknown video '{id}'"
                    )));
                }
            }
            for video in &self.videos {
                if !self.split_assignment.contains_key(&video.video_id) {
                    return Err(OscaError::Validation(format!(
                        "video '{}' has no split assignment",
                        video.video_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// The corpus-wide feature dimension, absent for a corpus with no videos.
    pub fn feature_dim(&self) -> Option<usize> {
        self.videos
            .iter()
            .flat_map(|v| v.features.first())
            .map(FeatureSequence::dim)
            .next()
    }

    pub fn num_segments(&self) -> usize {
        self.videos.iter().map(ActivityVideo::num_segments).sum()
    }

    /// Videos of one split, or all videos when `split` is absent.
    pub fn videos_in_split(&self, split: Option<Split>) -> impl Iterator<Item = &ActivityVideo> {
        self.videos.iter().filter(move |v| match split {
            Some(s) => self.split_assignment.get(&v.video_id) == Some(&s),
            None => true,
        })
    }

    /// Decision samples for every video of a split, in corpus order.
    pub fn decision_samples(&self, window: usize, split: Option<Split>) -> Result<Vec<DecisionSample>> {
        let mut out = Vec::new();
        for video in self.videos_in_split(split) {
            out.extend(build_decision_samples(video, window)?);
        }
        Ok(out)
    }
}

/// One anticipation instance at the onset of segment n+1.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSample {
    pub video_id: String,
    /// Number n of observed segments; the sample anticipates segment n+1.
    pub decision_index: usize,
    /// Concatenated feature rows of the last `W` observed segments.
    pub visual_window: Array2<f64>,
    pub action_history: Vec<ActionLabel>,
    pub state_history: Vec<StateChangeClass>,
    pub target: StateChangeClass,
}

/// Builds one sample per decision point of the video.
///
/// For n in [1, segments−1]: the visual window concatenates the features of
/// segments max(1, n−W+1)..n, histories cover segments 1..n, and the target
/// is the state change of segment n+1. Nothing from segment n+1 onward leaks
/// into the sample. Videos with fewer than two segments yield no samples.
pub fn build_decision_samples(video: &ActivityVideo, window: usize) -> Result<Vec<DecisionSample>> {
    build_decision_samples_limited(video, window, None)
}

/// As [`build_decision_samples`] with an optional history cap; when set, only
/// the most recent `max_history` tokens of each history are kept.
pub fn build_decision_samples_limited(
    video: &ActivityVideo,
    window: usize,
    max_history: Option<usize>,
) -> Result<Vec<DecisionSample>> {
    if window == 0 {
        return Err(OscaError::Validation("window must be at least 1".into()));
    }
    if let Some(0) = max_history {
        return Err(OscaError::Validation("max history must be at least 1".into()));
    }
    video.validate()?;
    let n_segments = video.segments.len();
    if n_segments < 2 {
        return Ok(Vec::new());
    }
    let mut samples = Vec::with_capacity(n_segments - 1);
    for n in 1..n_segments {
        let win_start = n.saturating_sub(window);
        let visual_window = concat_rows(&video.features[win_start..n])?;
        let hist_start = match max_history {
            Some(cap) => n.saturating_sub(cap),
            None => 0,
        };
        let action_history = video.segments[hist_start..n]
            .iter()
            .map(|s| s.action)
            .collect();
        let state_history = video.segments[hist_start..n]
            .iter()
            .map(|s| s.state_change)
            .collect();
        samples.push(DecisionSample {
            video_id: video.video_id.clone(),
            decision_index: n,
            visual_window,
            action_history,
            state_history,
            target: video.segments[n].state_change,
        });
    }
    Ok(samples)
}

fn concat_rows(features: &[FeatureSequence]) -> Result<Array2<f64>> {
    let dim = features[0].dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(OscaError::Shape(format!(
            "feature dimension mismatch within window: {} vs {}",
            dim,
            bad.dim()
        )));
    }
    let total: usize = features.iter().map(FeatureSequence::steps).sum();
    let mut out = Array2::zeros((total, dim));
    let mut row = 0;
    for feat in features {
        for src in feat.values().rows() {
            out.row_mut(row).assign(&src);
            row += 1;
        }
    }
    Ok(out)
}

/// Empirical distribution of decision-sample targets over a split.
///
/// Errors when the split contains no decision points (every video has fewer
/// than two segments, or the split is empty).
pub fn class_priors(corpus: &Corpus, split: Option<Split>) -> Result<[f64; NUM_CLASSES]> {
    let mut counts = [0u64; NUM_CLASSES];
    for video in corpus.videos_in_split(split) {
        for seg in video.segments.iter().skip(1) {
            counts[seg.state_change.index()] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(OscaError::Validation(
            "split contains no decision samples".into(),
        ));
    }
    let mut priors = [0.0; NUM_CLASSES];
    for (p, c) in priors.iter_mut().zip(counts) {
        *p = c as f64 / total as f64;
    }
    Ok(priors)
}
