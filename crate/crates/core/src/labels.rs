//! Label vocabularies and the inverse state-change pair algebra.
//!
//! Nine state-change classes are anticipated: eight proper changes plus
//! `no_osc` for actions that leave every object state untouched. Three of the
//! change classes form inverse pairs (activate/deactivate, deposit/remove,
//! construct/deconstruct): the pre-state of one is the post-state of the
//! other, which [`same_state`] exploits when comparing frame-level labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{OscaError, Result};

/// The nine anticipation target classes.
///
/// Declaration order is the canonical class order used by every 9-vector in
/// the toolkit (priors, prediction distributions, confusion rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateChangeClass {
    Activate,
    Deactivate,
    Deposit,
    Remove,
    Construct,
    Deconstruct,
    Deform,
    Other,
    NoOsc,
}

/// Number of state-change classes (the `C` of the training objective).
pub const NUM_CLASSES: usize = 9;

impl StateChangeClass {
    /// All nine classes in canonical order.
    pub const ALL: [StateChangeClass; NUM_CLASSES] = [
        StateChangeClass::Activate,
        StateChangeClass::Deactivate,
        StateChangeClass::Deposit,
        StateChangeClass::Remove,
        StateChangeClass::Construct,
        StateChangeClass::Deconstruct,
        StateChangeClass::Deform,
        StateChangeClass::Other,
        StateChangeClass::NoOsc,
    ];

    /// The eight classes that can appear as the base of a frame label.
    pub const CHANGES: [StateChangeClass; 8] = [
        StateChangeClass::Activate,
        StateChangeClass::Deactivate,
        StateChangeClass::Deposit,
        StateChangeClass::Remove,
        StateChangeClass::Construct,
        StateChangeClass::Deconstruct,
        StateChangeClass::Deform,
        StateChangeClass::Other,
    ];

    /// Index in canonical order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<StateChangeClass> {
        Self::ALL.get(i).copied()
    }

    /// Canonical lowercase string form.
    pub fn as_str(self) -> &'static str {
        match self {
            StateChangeClass::Activate => "activate",
            StateChangeClass::Deactivate => "deactivate",
            StateChangeClass::Deposit => "deposit",
            StateChangeClass::Remove => "remove",
            StateChangeClass::Construct => "construct",
            StateChangeClass::Deconstruct => "deconstruct",
            StateChangeClass::Deform => "deform",
            StateChangeClass::Other => "other",
            StateChangeClass::NoOsc => "no_osc",
        }
    }
}

impl fmt::Display for StateChangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateChangeClass {
    type Err = OscaError;

    fn from_str(s: &str) -> Result<Self> {
        StateChangeClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| OscaError::Domain(format!("unknown state change class '{s}'")))
    }
}

/// Returns the inverse partner of a state-change class, if it has one.
///
/// Exactly three pairs exist: activate/deactivate, deposit/remove and
/// construct/deconstruct. `deform`, `other` and `no_osc` have no inverse.
/// Where defined the relation is involutive: `inverse_of(inverse_of(s)) == s`.
pub fn inverse_of(s: StateChangeClass) -> Option<StateChangeClass> {
    use StateChangeClass::*;
    match s {
        Activate => Some(Deactivate),
        Deactivate => Some(Activate),
        Deposit => Some(Remove),
        Remove => Some(Deposit),
        Construct => Some(Deconstruct),
        Deconstruct => Some(Construct),
        Deform | Other | NoOsc => None,
    }
}

/// Position of a frame label relative to its segment's state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pre,
    Post,
}

/// A frame-level object state label, `pre_X` or `post_X` for one of the eight
/// change classes. 16 values exist in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameStateLabel {
    phase: Phase,
    base: StateChangeClass,
}

impl FrameStateLabel {
    pub fn phase(self) -> Phase {
        self.phase
    }

    pub fn base(self) -> StateChangeClass {
        self.base
    }

    /// All 16 frame labels, pre before post, bases in canonical order.
    pub fn all() -> Vec<FrameStateLabel> {
        let mut out = Vec::with_capacity(16);
        for phase in [Phase::Pre, Phase::Post] {
            for base in StateChangeClass::CHANGES {
                out.push(FrameStateLabel { phase, base });
            }
        }
        out
    }
}

/// Builds a frame label. `no_osc` is not a valid base: a segment without a
/// state change has no pre/post state to label.
pub fn frame_label(phase: Phase, base: StateChangeClass) -> Result<FrameStateLabel> {
    if base == StateChangeClass::NoOsc {
        return Err(OscaError::Domain(
            "no_osc cannot be the base of a frame state label".into(),
        ));
    }
    Ok(FrameStateLabel { phase, base })
}

/// True iff the two frame labels denote the same underlying object state.
///
/// Holds when the labels are identical, or when they form a `pre_X`/`post_Y`
/// pair with `Y` the inverse of `X` (e.g. `pre_remove` and `post_deposit`
/// both show the object in place). Symmetric and reflexive; it partitions the
/// 16 labels into 10 equivalence classes (6 merged pairs and 4 singletons).
pub fn same_state(a: FrameStateLabel, b: FrameStateLabel) -> bool {
    if a == b {
        return true;
    }
    match (a.phase, b.phase) {
        (Phase::Pre, Phase::Post) => inverse_of(a.base) == Some(b.base),
        (Phase::Post, Phase::Pre) => inverse_of(b.base) == Some(a.base),
        _ => false,
    }
}

impl fmt::Display for FrameStateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phase = match self.phase {
            Phase::Pre => "pre",
            Phase::Post => "post",
        };
        write!(f, "{}_{}", phase, self.base)
    }
}

impl FromStr for FrameStateLabel {
    type Err = OscaError;

    fn from_str(s: &str) -> Result<Self> {
        let (phase, rest) = if let Some(rest) = s.strip_prefix("pre_") {
            (Phase::Pre, rest)
        } else if let Some(rest) = s.strip_prefix("post_") {
            (Phase::Post, rest)
        } else {
            return Err(OscaError::Domain(format!("unknown frame state label '{s}'")));
        };
        frame_label(phase, rest.parse()?)
            .map_err(|_| OscaError::Domain(format!("unknown frame state label '{s}'")))
    }
}

impl Serialize for FrameStateLabel {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FrameStateLabel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An action as a (verb, noun) pair of vocabulary indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionLabel {
    pub verb_id: usize,
    pub noun_id: usize,
}

impl ActionLabel {
    pub fn new(verb_id: usize, noun_id: usize) -> Self {
        ActionLabel { verb_id, noun_id }
    }
}

/// Frozen verb/noun vocabularies plus the fixed nine-class state vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    verbs: Vec<String>,
    nouns: Vec<String>,
}

impl LabelVocabulary {
    /// Builds a vocabulary, rejecting duplicate or empty entries.
    pub fn new(verbs: Vec<String>, nouns: Vec<String>) -> Result<Self> {
        for (kind, list) in [("verb", &verbs), ("noun", &nouns)] {
            let mut seen = std::collections::HashSet::new();
            for (i, s) in list.iter().enumerate() {
                if s.is_empty() {
                    return Err(OscaError::Validation(format!("empty {kind} at index {i}")));
                }
                if !seen.insert(s.as_str()) {
                    return Err(OscaError::Validation(format!(
                        "duplicate {kind} '{s}' at index {i}"
                    )));
                }
            }
        }
        Ok(LabelVocabulary { verbs, nouns })
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn nouns(&self) -> &[String] {
        &self.nouns
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn num_nouns(&self) -> usize {
        self.nouns.len()
    }

    /// Number of state classes, the `C` of the loss.
    pub fn num_states(&self) -> usize {
        NUM_CLASSES
    }

    pub fn verb(&self, id: usize) -> Option<&str> {
        self.verbs.get(id).map(String::as_str)
    }

    pub fn noun(&self, id: usize) -> Option<&str> {
        self.nouns.get(id).map(String::as_str)
    }

    pub fn verb_index(&self, s: &str) -> Option<usize> {
        self.verbs.iter().position(|v| v == s)
    }

    pub fn noun_index(&self, s: &str) -> Option<usize> {
        self.nouns.iter().position(|n| n == s)
    }

    pub fn contains_action(&self, a: ActionLabel) -> bool {
        a.verb_id < self.verbs.len() && a.noun_id < self.nouns.len()
    }

    /// SHA-256 over the ordered verb/noun/state strings; checkpoints embed it
    /// so a model is never applied against a different vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"verbs");
        for v in &self.verbs {
            h.update([0u8]);
            h.update(v.as_bytes());
        }
        h.update(b"\0nouns");
        for n in &self.nouns {
            h.update([0u8]);
            h.update(n.as_bytes());
        }
        h.update(b"\0states");
        for s in StateChangeClass::ALL {
            h.update([0u8]);
            h.update(s.as_str().as_bytes());
        }
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
