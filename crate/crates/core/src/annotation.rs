//! Rule pipeline that turns raw segment records into frame-level pre/post
//! state labels.
//!
//! Four stages run in order per segment: PNR ordering against the previously
//! accepted segment, occlusion check on the pre/post critical frames, bounding
//! box area check, then labeling. A segment rejected at any stage carries the
//! rejecting rule as its status and does not become the comparison point for
//! later segments. Segments without a state change are skipped entirely.

use serde::{Deserialize, Serialize};

use crate::corpus::{ActivityVideo, CriticalFrame, Segment};
use crate::error::{OscaError, Result};
use crate::labels::{frame_label, FrameStateLabel, Phase, StateChangeClass};

/// Minimum accepted bounding box area in square pixels. Boxes strictly below
/// this are rejected; exactly 100 passes.
pub const DEFAULT_AREA_THRESHOLD: f64 = 100.0;

/// Outcome of the per-frame eligibility check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameCheck {
    Accept,
    RejectedOcclusion,
    RejectedArea,
}

/// Final status of one segment after the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStatus {
    Annotated,
    RejectedPnrOrder,
    RejectedOcclusion,
    RejectedArea,
}

/// Why an individual critical frame was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRejectReason {
    Occluded,
    AreaBelowThreshold,
}

/// Per-segment annotation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub segment_id: String,
    pub status: AnnotationStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pre_label: Option<FrameStateLabel>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub post_label: Option<FrameStateLabel>,
    /// Critical frames that failed a check, with the reason.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub rejected_frames: Vec<(u64, FrameRejectReason)>,
}

/// Aggregate counts for one annotation run.
///
/// `total` counts the segments examined by the pipeline; segments without a
/// state change are skipped and not included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub total: u64,
    pub annotated: u64,
    pub rejected_pnr_order: u64,
    pub rejected_occlusion: u64,
    pub rejected_area: u64,
}

impl AuditReport {
    pub fn merge(&mut self, other: &AuditReport) {
        self.total += other.total;
        self.annotated += other.annotated;
        self.rejected_pnr_order += other.rejected_pnr_order;
        self.rejected_occlusion += other.rejected_occlusion;
        self.rejected_area += other.rejected_area;
    }

    /// Plain-text rendering for the audit file.
    pub fn render(&self) -> String {
        format!(
            "total: {}\nannotated: {}\nrejected_pnr_order: {}\nrejected_occlusion: {}\nrejected_area: {}\n",
            self.total,
            self.annotated,
            self.rejected_pnr_order,
            self.rejected_occlusion,
            self.rejected_area
        )
    }
}

/// PNR ordering rule: the segment under examination is rejected iff the
/// previously accepted segment's PNR lies strictly after its own. Equal PNRs
/// pass; the first segment of a video has no predecessor and always passes.
pub fn check_pnr_order(prev_annotated: Option<&Segment>, current: &Segment) -> bool {
    match prev_annotated {
        Some(prev) => prev.pnr_frame <= current.pnr_frame,
        None => true,
    }
}

/// Per-frame eligibility: occlusion is checked before area, so a frame that
/// is both occluded and under-area reports the occlusion.
pub fn check_frame_eligibility(frame: &CriticalFrame, area_threshold: f64) -> FrameCheck {
    if frame.occluded {
        return FrameCheck::RejectedOcclusion;
    }
    if frame.box_area() < area_threshold {
        return FrameCheck::RejectedArea;
    }
    FrameCheck::Accept
}

/// Runs the four-stage pipeline on one segment.
///
/// `prev_annotated` must be the most recently *accepted* segment of the same
/// video, if any. Rejected segments never become the comparison point.
pub fn annotate_segment(
    segment: &Segment,
    prev_annotated: Option<&Segment>,
) -> Result<SegmentAnnotation> {
    annotate_segment_with_threshold(segment, prev_annotated, DEFAULT_AREA_THRESHOLD)
}

pub fn annotate_segment_with_threshold(
    segment: &Segment,
    prev_annotated: Option<&Segment>,
    area_threshold: f64,
) -> Result<SegmentAnnotation> {
    if segment.state_change == StateChangeClass::NoOsc {
        return Err(OscaError::Domain(format!(
            "segment '{}' has no state change and is not considered for annotation",
            segment.segment_id
        )));
    }
    let pre = segment.pre_frame.as_ref().ok_or_else(|| {
        OscaError::Validation(format!("segment '{}' is missing its pre frame", segment.segment_id))
    })?;
    let post = segment.post_frame.as_ref().ok_or_else(|| {
        OscaError::Validation(format!("segment '{}' is missing its post frame", segment.segment_id))
    })?;

    let mut annotation = SegmentAnnotation {
        segment_id: segment.segment_id.clone(),
        status: AnnotationStatus::Annotated,
        pre_label: None,
        post_label: None,
        rejected_frames: Vec::new(),
    };

    // Stage 1: PNR ordering.
    if !check_pnr_order(prev_annotated, segment) {
        annotation.status = AnnotationStatus::RejectedPnrOrder;
        return Ok(annotation);
    }

    // Stage 2: occlusion, both frames.
    for frame in [pre, post] {
        if frame.occluded {
            annotation
                .rejected_frames
                .push((frame.frame_index, FrameRejectReason::Occluded));
        }
    }
    if !annotation.rejected_frames.is_empty() {
        annotation.status = AnnotationStatus::RejectedOcclusion;
        return Ok(annotation);
    }

    // Stage 3: box area, both frames.
    for frame in [pre, post] {
        if frame.box_area() < area_threshold {
            annotation
                .rejected_frames
                .push((frame.frame_index, FrameRejectReason::AreaBelowThreshold));
        }
    }
    if !annotation.rejected_frames.is_empty() {
        annotation.status = AnnotationStatus::RejectedArea;
        return Ok(annotation);
    }

    // Stage 4: labeling.
    annotation.pre_label = Some(frame_label(Phase::Pre, segment.state_change)?);
    annotation.post_label = Some(frame_label(Phase::Post, segment.state_change)?);
    Ok(annotation)
}

/// Runs the pipeline over a whole video, maintaining the prev-accepted
/// pointer. Segments with `no_osc` are skipped and not counted.
pub fn annotate_video(video: &ActivityVideo) -> Result<(Vec<SegmentAnnotation>, AuditReport)> {
    annotate_video_with_threshold(video, DEFAULT_AREA_THRESHOLD)
}

pub fn annotate_video_with_threshold(
    video: &ActivityVideo,
    area_threshold: f64,
) -> Result<(Vec<SegmentAnnotation>, AuditReport)> {
    let mut last_start = None;
    for seg in &video.segments {
        if let Some(prev_start) = last_start {
            if seg.start_frame < prev_start {
                return Err(OscaError::Validation(format!(
                    "segments of video '{}' are not ordered by start frame at segment '{}'",
                    video.video_id, seg.segment_id
                )));
            }
        }
        last_start = Some(seg.start_frame);
    }

    let mut annotations = Vec::new();
    let mut report = AuditReport::default();
    let mut prev_annotated: Option<&Segment> = None;
    for seg in &video.segments {
        if seg.state_change == StateChangeClass::NoOsc {
            continue;
        }
        report.total += 1;
        let annotation = annotate_segment_with_threshold(seg, prev_annotated, area_threshold)?;
        match annotation.status {
            AnnotationStatus::Annotated => {
                report.annotated += 1;
                prev_annotated = Some(seg);
            }
            AnnotationStatus::RejectedPnrOrder => report.rejected_pnr_order += 1,
            AnnotationStatus::RejectedOcclusion => report.rejected_occlusion += 1,
            AnnotationStatus::RejectedArea => report.rejected_area += 1,
        }
        annotations.push(annotation);
    }
    Ok((annotations, report))
}
