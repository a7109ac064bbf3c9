//! Toolkit for anticipating object state changes in procedural activity videos.
//!
//! An activity video is a sequence of action segments; each segment may change
//! the state of the object in use (activate it, deposit it, deform it, ...) or
//! leave every object state untouched. At the onset of the next, not yet
//! observed action, the task is to predict which of nine state-change classes
//! that action will cause. The crate covers the full workflow:
//!
//! * [`labels`]: the nine-class state-change vocabulary, inverse-pair algebra
//!   and frame-level pre/post state labels,
//! * [`annotation`]: the rule pipeline that turns segment records into
//!   frame-level state labels with an audit trail,
//! * [`corpus`]: the corpus data model, file formats, decision-sample
//!   construction, deterministic splitting and a synthetic generator,
//! * [`model`]: a three-stream (visual + action history + state history)
//!   recurrent anticipation network with its training loop,
//! * [`recognizers`]: oracle, noise-corrupted and rule-composed sources for
//!   the lexical histories consumed at inference time,
//! * [`eval`]: top-k mean accuracy, macro F1, confusion/transition statistics
//!   and the noise-robustness sweep,
//! * [`config`] / [`cli`]: the experiment configuration file and the `osca`
//!   command-line entry point.

pub mod annotation;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod labels;
pub mod model;
pub mod plot;
pub mod recognizers;

pub use error::OscaError;

/// Splitmix64 step, used to derive independent RNG streams from a base seed.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable FNV-1a hash of a string, for seeding per-video RNG streams by id.
pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
