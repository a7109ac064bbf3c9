//! Deterministic video-level train/val/test assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OscaError, Result};
use crate::mix_seed;

use super::{Corpus, Split};

const SPLIT_SALT: u64 = 0x5911_7ba1_a2ce_77d1;

const RATIO_TOLERANCE: f64 = 1e-9;

/// Assigns every video to train/val/test at the video level (segments of one
/// video never straddle splits).
///
/// The assignment is a pure function of the video id set, the ratios and the
/// seed: ids are sorted, shuffled with a seeded RNG, and cut into contiguous
/// runs sized by largest-remainder apportionment, so each split size is
/// within one video of its exact share.
pub fn split_corpus(corpus: &mut Corpus, ratios: (f64, f64, f64), seed: u64) -> Result<()> {
    let (train, val, test) = ratios;
    for (name, r) in [("train", train), ("val", val), ("test", test)] {
        if !(r > 0.0) || !r.is_finite() {
            return Err(OscaError::Validation(format!(
                "{name} ratio must be positive, got {r}"
            )));
        }
    }
    let sum = train + val + test;
    if (sum - 1.0).abs() > RATIO_TOLERANCE {
        return Err(OscaError::Validation(format!(
            "split ratios sum to {sum}, expected 1"
        )));
    }
    let n = corpus.videos.len();
    if n < Split::ALL.len() {
        return Err(OscaError::Validation(format!(
            "{n} videos cannot be split into {} classes",
            Split::ALL.len()
        )));
    }

    let mut ids: Vec<String> = corpus.videos.iter().map(|v| v.video_id.clone()).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SPLIT_SALT));
    ids.shuffle(&mut rng);

    let counts = apportion(n, [train, val, test]);
    corpus.split_assignment.clear();
    let mut cursor = 0;
    for (split, count) in Split::ALL.into_iter().zip(counts) {
        for id in &ids[cursor..cursor + count] {
            corpus.split_assignment.insert(id.clone(), split);
        }
        cursor += count;
    }
    Ok(())
}

/// Largest-remainder apportionment of `n` items over weights.
fn apportion(n: usize, weights: [f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    // Largest fractional part first; ties favor the earlier split.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in 0..n.saturating_sub(assigned) {
        counts[order[i % 3]] += 1;
    }
    [counts[0], counts[1], counts[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ActivityVideo, FeatureSequence, FeatureSource, Segment};
    use crate::labels::{ActionLabel, LabelVocabulary, StateChangeClass};
    use ndarray::Array2;

    fn corpus_of(n: usize) -> Corpus {
        let videos = (0..n)
            .map(|i| ActivityVideo {
                video_id: format!("v{i:03}"),
                segments: vec![Segment {
                    segment_id: format!("v{i:03}_s0"),
                    start_frame: 0,
                    end_frame: 10,
                    pnr_frame: 5,
                    action: ActionLabel::new(0, 0),
                    state_change: StateChangeClass::Deposit,
                    pre_frame: None,
                    post_frame: None,
                }],
                features: vec![
                    FeatureSequence::new(Array2::zeros((1, 2)), FeatureSource::Synthetic).unwrap(),
                ],
            })
            .collect();
        Corpus::new(
            LabelVocabulary::new(vec!["v".into()], vec!["n".into()]).unwrap(),
            videos,
        )
        .unwrap()
    }

    fn counts(corpus: &Corpus) -> [usize; 3] {
        let mut out = [0; 3];
        for split in corpus.split_assignment.values() {
            out[Split::ALL.iter().position(|s| s == split).unwrap()] += 1;
        }
        out
    }

    #[test]
    fn ten_videos_sixty_twenty_twenty() {
        let mut corpus = corpus_of(10);
        split_corpus(&mut corpus, (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!(counts(&corpus), [6, 2, 2]);
        corpus.validate().unwrap();
    }

    #[test]
    fn three_videos_even_thirds() {
        let mut corpus = corpus_of(3);
        split_corpus(&mut corpus, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), 9).unwrap();
        assert_eq!(counts(&corpus), [1, 1, 1]);
    }

    #[test]
    fn same_seed_reproduces_assignment() {
        let mut a = corpus_of(30);
        let mut b = corpus_of(30);
        split_corpus(&mut a, (0.6, 0.2, 0.2), 5).unwrap();
        split_corpus(&mut b, (0.6, 0.2, 0.2), 5).unwrap();
        assert_eq!(a.split_assignment, b.split_assignment);
    }

    #[test]
    fn different_seeds_usually_differ() {
        let mut a = corpus_of(30);
        let mut b = corpus_of(30);
        split_corpus(&mut a, (0.6, 0.2, 0.2), 5).unwrap();
        split_corpus(&mut b, (0.6, 0.2, 0.2), 6).unwrap();
        assert_ne!(a.split_assignment, b.split_assignment);
    }

    #[test]
    fn assignment_ignores_video_order() {
        let mut a = corpus_of(12);
        let mut b = corpus_of(12);
        b.videos.reverse();
        split_corpus(&mut a, (0.6, 0.2, 0.2), 3).unwrap();
        split_corpus(&mut b, (0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!(a.split_assignment, b.split_assignment);
    }

    #[test]
    fn covers_every_video_disjointly() {
        let mut corpus = corpus_of(17);
        split_corpus(&mut corpus, (0.5, 0.25, 0.25), 2).unwrap();
        assert_eq!(corpus.split_assignment.len(), 17);
        let [tr, va, te] = counts(&corpus);
        assert_eq!(tr + va + te, 17);
        // Largest remainder keeps each count within one of its exact share.
        assert!((tr as f64 - 8.5).abs() <= 1.0);
        assert!((va as f64 - 4.25).abs() <= 1.0);
        assert!((te as f64 - 4.25).abs() <= 1.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let mut corpus = corpus_of(10);
        assert!(split_corpus(&mut corpus, (0.6, 0.2, 0.1), 1).is_err()); // sum != 1
        assert!(split_corpus(&mut corpus, (1.0, 0.0, 0.0), 1).is_err()); // zero ratio
        assert!(split_corpus(&mut corpus, (-0.2, 0.6, 0.6), 1).is_err());
        let mut tiny = corpus_of(2);
        assert!(split_corpus(&mut tiny, (0.6, 0.2, 0.2), 1).is_err());
    }
}
