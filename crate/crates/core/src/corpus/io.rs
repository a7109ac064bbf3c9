//! Corpus persistence.
//!
//! A corpus is stored as two files side by side: a line-delimited JSON file
//! and a binary feature sidecar with the same stem and a `.feat` extension.
//! The JSON file holds one record per line:
//!
//! ```text
//! {"kind":"vocab","verbs":[...],"nouns":[...]}
//! {"kind":"video","video_id":"v","split":"train","segments":[{"segment_id":"s",
//!   "start":0,"end":120,"pnr":60,"verb":1,"noun":0,"state_change":"deposit",
//!   "pre_frame":{"idx":5,"box":[x,y,w,h],"occluded":false},"post_frame":{...}}]}
//! {"kind":"features","video_id":"v","segment_id":"s","offset":0,"t":2,"d":3}
//! ```
//!
//! The `split` field and the `pre_frame`/`post_frame` fields are optional.
//! Each features record points at `t*d` little-endian 32-bit floats in the
//! sidecar, stored row-major, starting at the given byte offset. The feature
//! dimension `d` must be constant across the whole corpus.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{OscaError, Result};
use crate::labels::{ActionLabel, LabelVocabulary, StateChangeClass};

use super::{
    ActivityVideo, BoundingBox, Corpus, CriticalFrame, FeatureSequence, FeatureSource, Segment,
    Split,
};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Vocab {
        verbs: Vec<String>,
        nouns: Vec<String>,
    },
    Video {
        video_id: String,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        split: Option<Split>,
        segments: Vec<SegmentRecord>,
    },
    Features {
        video_id: String,
        segment_id: String,
        offset: u64,
        t: usize,
        d: usize,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    segment_id: String,
    start: u64,
    end: u64,
    pnr: u64,
    verb: usize,
    noun: usize,
    state_change: StateChangeClass,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pre_frame: Option<FrameRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    post_frame: Option<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    idx: u64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    occluded: bool,
}

impl FrameRecord {
    fn from_frame(f: &CriticalFrame) -> Self {
        FrameRecord {
            idx: f.frame_index,
            bbox: [f.bbox.x, f.bbox.y, f.bbox.w, f.bbox.h],
            occluded: f.occluded,
        }
    }

    fn into_frame(self, object_class: usize) -> CriticalFrame {
        CriticalFrame {
            frame_index: self.idx,
            object_class,
            bbox: BoundingBox {
                x: self.bbox[0],
                y: self.bbox[1],
                w: self.bbox[2],
                h: self.bbox[3],
            },
            occluded: self.occluded,
        }
    }
}

impl SegmentRecord {
    fn from_segment(s: &Segment) -> Self {
        SegmentRecord {
            segment_id: s.segment_id.clone(),
            start: s.start_frame,
            end: s.end_frame,
            pnr: s.pnr_frame,
            verb: s.action.verb_id,
            noun: s.action.noun_id,
            state_change: s.state_change,
            pre_frame: s.pre_frame.as_ref().map(FrameRecord::from_frame),
            post_frame: s.post_frame.as_ref().map(FrameRecord::from_frame),
        }
    }

    fn into_segment(self) -> Segment {
        // The critical frame shows the object of change, whose class is the
        // segment's noun.
        let noun = self.noun;
        Segment {
            segment_id: self.segment_id,
            start_frame: self.start,
            end_frame: self.end,
            pnr_frame: self.pnr,
            action: ActionLabel::new(self.verb, noun),
            state_change: self.state_change,
            pre_frame: self.pre_frame.map(|f| f.into_frame(noun)),
            post_frame: self.post_frame.map(|f| f.into_frame(noun)),
        }
    }
}

/// The feature sidecar sits next to the corpus file with a `.feat` extension.
pub fn sidecar_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("feat")
}

/// Writes the corpus file and its feature sidecar. Output is deterministic:
/// identical corpora produce byte-identical files.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    corpus.validate()?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }

    let mut blob: Vec<u8> = Vec::new();
    let mut index: Vec<Record> = Vec::new();
    for video in &corpus.videos {
        for (seg, feat) in video.segments.iter().zip(&video.features) {
            index.push(Record::Features {
                video_id: video.video_id.clone(),
                segment_id: seg.segment_id.clone(),
                offset: blob.len() as u64,
                t: feat.steps(),
                d: feat.dim(),
            });
            for v in feat.values().iter() {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }

    let mut out = Vec::new();
    let vocab = Record::Vocab {
        verbs: corpus.vocabulary.verbs().to_vec(),
        nouns: corpus.vocabulary.nouns().to_vec(),
    };
    writeln!(out, "{}", serde_json::to_string(&vocab)?)?;
    let mut feature_records = index.into_iter();
    for video in &corpus.videos {
        let record = Record::Video {
            video_id: video.video_id.clone(),
            split: corpus.split_assignment.get(&video.video_id).copied(),
            segments: video.segments.iter().map(SegmentRecord::from_segment).collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
        for _ in 0..video.segments.len() {
            let rec = feature_records.next().expect("index aligned with segments");
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
    }

    fs::write(path, out)?;
    fs::write(sidecar_path(path), blob)?;
    Ok(())
}

struct FeatureRef {
    offset: u64,
    t: usize,
    d: usize,
    line: usize,
}

/// Loads and fully validates a corpus from its file pair.
///
/// Schema violations are reported with the offending line number; a feature
/// dimension mismatch anywhere in the file is fatal.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(OscaError::Validation(format!(
            "no records in corpus file '{}'",
            path.display()
        )));
    }

    let mut vocab: Option<LabelVocabulary> = None;
    let mut videos: Vec<(usize, String, Option<Split>, Vec<SegmentRecord>)> = Vec::new();
    let mut feature_refs: HashMap<(String, String), FeatureRef> = HashMap::new();
    let mut seen_videos: HashMap<String, usize> = HashMap::new();
    let mut dim: Option<(usize, usize)> = None; // (d, line)

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line)
            .map_err(|e| OscaError::Format(format!("line {lineno}: {e}")))?;
        match record {
            Record::Vocab { verbs, nouns } => {
                if vocab.is_some() {
                    return Err(OscaError::Format(format!(
                        "line {lineno}: duplicate vocab record"
                    )));
                }
                vocab = Some(LabelVocabulary::new(verbs, nouns)?);
            }
            Record::Video {
                video_id,
                split,
                segments,
            } => {
                if let Some(first) = seen_videos.insert(video_id.clone(), lineno) {
                    return Err(OscaError::Format(format!(
                        "line {lineno}: duplicate video record '{video_id}' (first at line {first})"
                    )));
                }
                videos.push((lineno, video_id, split, segments));
            }
            Record::Features {
                video_id,
                segment_id,
                offset,
                t,
                d,
            } => {
                match dim {
                    Some((d0, line0)) if d0 != d => {
                        return Err(OscaError::Format(format!(
                            "line {lineno}: feature dimension {d} conflicts with dimension {d0} from line {line0}"
                        )));
                    }
                    None => dim = Some((d, lineno)),
                    _ => {}
                }
                let key = (video_id, segment_id);
                if feature_refs.contains_key(&key) {
                    return Err(OscaError::Format(format!(
                        "line {lineno}: duplicate features record for segment '{}' of video '{}'",
                        key.1, key.0
                    )));
                }
                feature_refs.insert(key, FeatureRef { offset, t, d, line: lineno });
            }
        }
    }

    let vocab = vocab.ok_or_else(|| OscaError::Validation("no vocab record found".into()))?;
    let blob = fs::read(sidecar_path(path))?;

    let mut out_videos = Vec::with_capacity(videos.len());
    let mut split_assignment = BTreeMap::new();
    for (_, video_id, split, segment_records) in videos {
        if let Some(s) = split {
            split_assignment.insert(video_id.clone(), s);
        }
        let segments: Vec<Segment> = segment_records
            .into_iter()
            .map(SegmentRecord::into_segment)
            .collect();
        let mut features = Vec::with_capacity(segments.len());
        for seg in &segments {
            let key = (video_id.clone(), seg.segment_id.clone());
            let fref = feature_refs.remove(&key).ok_or_else(|| {
                OscaError::Validation(format!(
                    "missing features record for segment '{}' of video '{}'",
                    seg.segment_id, video_id
                ))
            })?;
            features.push(read_feature(&blob, &fref, &video_id, &seg.segment_id)?);
        }
        out_videos.push(ActivityVideo {
            video_id,
            segments,
            features,
        });
    }

    if let Some(((video_id, segment_id), fref)) = feature_refs.into_iter().next() {
        return Err(OscaError::Format(format!(
            "line {}: features record references unknown segment '{segment_id}' of video '{video_id}'",
            fref.line
        )));
    }

    let corpus = Corpus {
        vocabulary: vocab,
        videos: out_videos,
        split_assignment,
    };
    corpus.validate()?;
    Ok(corpus)
}

fn read_feature(
    blob: &[u8],
    fref: &FeatureRef,
    video_id: &str,
    segment_id: &str,
) -> Result<FeatureSequence> {
    let start = fref.offset as usize;
    let len = fref
        .t
        .checked_mul(fref.d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| OscaError::Format(format!("line {}: feature size overflows", fref.line)))?;
    let end = start.checked_add(len).filter(|&e| e <= blob.len()).ok_or_else(|| {
        OscaError::Format(format!(
            "line {}: features for segment '{segment_id}' of video '{video_id}' \
             need bytes [{start}, {}) but the sidecar has {}",
            fref.line,
            start + len,
            blob.len()
        ))
    })?;
    let mut values = Array2::zeros((fref.t, fref.d));
    for (i, chunk) in blob[start..end].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("chunk of 4")) as f64;
        values[[i / fref.d, i % fref.d]] = v;
    }
    FeatureSequence::new(values, FeatureSource::PrecomputedFile).map_err(|e| {
        OscaError::Format(format!(
            "line {}: invalid features for segment '{segment_id}' of video '{video_id}': {e}",
            fref.line
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn frame(idx: u64, noun: usize) -> CriticalFrame {
        CriticalFrame {
            frame_index: idx,
            object_class: noun,
            bbox: BoundingBox { x: 12.0, y: 10.0, w: 24.0, h: 18.0 },
            occluded: false,
        }
    }

    fn sample_corpus() -> Corpus {
        let vocab = LabelVocabulary::new(
            vec!["take".into(), "put".into()],
            vec!["cup".into(), "lid".into()],
        )
        .unwrap();
        let seg = |id: &str, start: u64, state: StateChangeClass, verb: usize, noun: usize| {
            let end = start + 120;
            let no_osc = state == StateChangeClass::NoOsc;
            Segment {
                segment_id: id.into(),
                start_frame: start,
                end_frame: end,
                pnr_frame: if no_osc { start } else { start + 60 },
                action: ActionLabel::new(verb, noun),
                state_change: state,
                pre_frame: (!no_osc).then(|| frame(start + 5, noun)),
                post_frame: (!no_osc).then(|| frame(end - 5, noun)),
            }
        };
        let feat = |vals: Array2<f64>| FeatureSequence::new(vals, FeatureSource::Synthetic).unwrap();
        let v1 = ActivityVideo {
            video_id: "kitchen_01".into(),
            segments: vec![
                seg("s0", 0, StateChangeClass::Deposit, 1, 0),
                seg("s1", 130, StateChangeClass::Remove, 0, 0),
            ],
            features: vec![
                feat(array![[0.5, -1.25, 2.0], [0.75, 0.0, -3.5]]),
                feat(array![[1.5, 2.5, -0.5], [0.25, -0.125, 4.0]]),
            ],
        };
        let v2 = ActivityVideo {
            video_id: "kitchen_02".into(),
            segments: vec![
                seg("s0", 0, StateChangeClass::Deposit, 1, 1),
                seg("s1", 130, StateChangeClass::NoOsc, 0, 1),
                seg("s2", 260, StateChangeClass::Remove, 0, 1),
            ],
            features: vec![
                feat(array![[1.0, 2.0, 3.0]]),
                feat(array![[-1.0, -2.0, -3.0]]),
                feat(array![[0.5, 0.5, 0.5], [1.5, 1.5, 1.5]]),
            ],
        };
        let mut corpus = Corpus::new(vocab, vec![v1, v2]).unwrap();
        corpus.split_assignment.insert("kitchen_01".into(), Split::Train);
        corpus.split_assignment.insert("kitchen_02".into(), Split::Test);
        corpus
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = sample_corpus();
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, corpus);
        assert_eq!(
            loaded.videos[0].features[0].source(),
            FeatureSource::PrecomputedFile
        );
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let corpus = sample_corpus();
        save_corpus(&corpus, &a).unwrap();
        save_corpus(&corpus, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(sidecar_path(&a)).unwrap(),
            fs::read(sidecar_path(&b)).unwrap()
        );
    }

    #[test]
    fn golden_fixture_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.jsonl");
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.videos.len(), 2);
        assert_eq!(corpus.videos[0].video_id, "kitchen_01");
        assert_eq!(corpus.videos[0].num_segments(), 2);
        assert_eq!(corpus.videos[1].num_segments(), 3);
        assert_eq!(corpus.feature_dim(), Some(3));
        assert_eq!(corpus.split_assignment[&"kitchen_01".to_string()], Split::Train);
        assert_eq!(corpus.split_assignment[&"kitchen_02".to_string()], Split::Test);
        assert_eq!(
            corpus.videos[0].segments[0].state_change,
            StateChangeClass::Deposit
        );
        assert_eq!(
            corpus.videos[1].segments[1].state_change,
            StateChangeClass::NoOsc
        );
        assert_eq!(corpus.videos[0].features[0].values()[[0, 1]], -1.25);
        assert_eq!(corpus.videos[1].features[2].values()[[1, 2]], 1.5);
    }

    fn write_corpus_text(dir: &Path, text: &str, blob: &[u8]) -> PathBuf {
        let path = dir.join("c.jsonl");
        fs::write(&path, text).unwrap();
        fs::write(sidecar_path(&path), blob).unwrap();
        path
    }

    #[test]
    fn empty_file_reports_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_corpus_text(dir.path(), "\n  \n", &[]);
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("no records"), "got: {err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let text = concat!(
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
            // Missing the pnr field.
            "{\"kind\":\"video\",\"video_id\":\"a\",\"segments\":[{\"segment_id\":\"s\",\
             \"start\":0,\"end\":10,\"verb\":0,\"noun\":0,\"state_change\":\"deposit\"}]}\n",
        );
        let path = write_corpus_text(dir.path(), text, &[]);
        let err = load_corpus(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("pnr"), "got: {msg}");
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let text = concat!(
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
            "{\"kind\":\"video\",\"video_id\":\"a\",\"segments\":[\
             {\"segment_id\":\"s0\",\"start\":0,\"end\":10,\"pnr\":5,\"verb\":0,\"noun\":0,\"state_change\":\"no_osc\"},\
             {\"segment_id\":\"s1\",\"start\":10,\"end\":20,\"pnr\":15,\"verb\":0,\"noun\":0,\"state_change\":\"no_osc\"}]}\n",
            "{\"kind\":\"features\",\"video_id\":\"a\",\"segment_id\":\"s0\",\"offset\":0,\"t\":1,\"d\":3}\n",
            "{\"kind\":\"features\",\"video_id\":\"a\",\"segment_id\":\"s1\",\"offset\":12,\"t\":1,\"d\":2}\n",
        );
        let blob: Vec<u8> = (0..20).collect();
        let path = write_corpus_text(dir.path(), text, &blob);
        let err = load_corpus(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4") && msg.contains("dimension"), "got: {msg}");
    }

    #[test]
    fn unknown_feature_target_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = concat!(
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
            "{\"kind\":\"features\",\"video_id\":\"ghost\",\"segment_id\":\"s\",\"offset\":0,\"t\":1,\"d\":1}\n",
        );
        let path = write_corpus_text(dir.path(), text, &[0, 0, 0, 0]);
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("unknown segment"), "got: {err}");
    }

    #[test]
    fn missing_features_record_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = concat!(
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
            "{\"kind\":\"video\",\"video_id\":\"a\",\"segments\":[\
             {\"segment_id\":\"s0\",\"start\":0,\"end\":10,\"pnr\":5,\"verb\":0,\"noun\":0,\"state_change\":\"no_osc\"}]}\n",
        );
        let path = write_corpus_text(dir.path(), text, &[]);
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("missing features record"), "got: {err}");
    }

    #[test]
    fn truncated_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = concat!(
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
            "{\"kind\":\"video\",\"video_id\":\"a\",\"segments\":[\
             {\"segment_id\":\"s0\",\"start\":0,\"end\":10,\"pnr\":5,\"verb\":0,\"noun\":0,\"state_change\":\"no_osc\"}]}\n",
            "{\"kind\":\"features\",\"video_id\":\"a\",\"segment_id\":\"s0\",\"offset\":0,\"t\":2,\"d\":2}\n",
        );
        let path = write_corpus_text(dir.path(), text, &[0; 8]); // needs 16 bytes
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("sidecar has 8"), "got: {err}");
    }

    #[test]
    fn duplicate_vocab_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = concat!(
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
            "{\"kind\":\"vocab\",\"verbs\":[\"v\"],\"nouns\":[\"n\"]}\n",
        );
        let path = write_corpus_text(dir.path(), text, &[]);
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate vocab"), "got: {err}");
    }

    #[test]
    fn missing_vocab_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = "{\"kind\":\"video\",\"video_id\":\"a\",\"segments\":[]}\n";
        let path = write_corpus_text(dir.path(), text, &[]);
        let err = load_corpus(&path).unwrap_err();
        assert!(err.to_string().contains("no vocab record"), "got: {err}");
    }
}
