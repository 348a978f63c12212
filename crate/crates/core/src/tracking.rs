//! Frame-to-frame track association.
//!
//! Greedy nearest neighbour with class gating: every frame, all
//! `(previous track, detection)` pairs of the same class whose Euclidean gap
//! is within the gate are taken in ascending distance order (ties go to the
//! lower track id, then the lower detection index). A pair is accepted when
//! neither side has been matched yet. Leftover detections open new tracks.

use crate::scene::{lane_rel_from_offset, Detection, TrackedObject};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("gate must be positive and finite, got {0}")]
    InvalidGate(f64),
    #[error("frame {frame}, detection {index}: non-finite coordinates")]
    NonFinite { frame: usize, index: usize },
}

/// Track id assigned to one detection, in the detection's original order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub track_id: u32,
    pub detection: Detection,
}

impl Assignment {
    pub fn to_tracked_object(&self) -> TrackedObject {
        TrackedObject {
            track_id: self.track_id,
            class_code: self.detection.class_code,
            dist_m: self.detection.range(),
            lane_rel: lane_rel_from_offset(self.detection.position[1]),
            confidence: self.detection.confidence.clamp(0.0, 1.0),
        }
    }
}

/// Assigns a persistent id to every detection of every frame.
///
/// The returned frames keep each frame's detection order; use
/// [`associate_tracks`] for the canonical, id-sorted object lists.
pub fn assign_track_ids(
    frames: &[Vec<Detection>],
    gate_m: f64,
) -> Result<Vec<Vec<Assignment>>, TrackingError> {
    if !(gate_m.is_finite() && gate_m > 0.0) {
        return Err(TrackingError::InvalidGate(gate_m));
    }
    let mut next_id: u32 = 0;
    let mut previous: Vec<Assignment> = Vec::new();
    let mut out = Vec::with_capacity(frames.len());

    for (f, detections) in frames.iter().enumerate() {
        if let Some(index) = detections.iter().position(|d| !d.is_finite()) {
            return Err(TrackingError::NonFinite { frame: f, index });
        }
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for prior in &previous {
            for (j, det) in detections.iter().enumerate() {
                if prior.detection.class_code != det.class_code {
                    continue;
                }
                let gap = prior.detection.distance_to(det);
                if gap <= gate_m {
                    candidates.push((gap, prior.track_id, j));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut matched: Vec<Option<u32>> = vec![None; detections.len()];
        let mut used_tracks: Vec<u32> = Vec::new();
        for (_, track_id, j) in candidates {
            if matched[j].is_none() && !used_tracks.contains(&track_id) {
                matched[j] = Some(track_id);
                used_tracks.push(track_id);
            }
        }

        let frame: Vec<Assignment> = detections
            .iter()
            .zip(matched)
            .map(|(det, m)| {
                let track_id = m.unwrap_or_else(|| {
                    let id = next_id;
                    next_id += 1;
                    id
                });
                Assignment {
                    track_id,
                    detection: *det,
                }
            })
            .collect();
        previous = frame.clone();
        out.push(frame);
    }
    Ok(out)
}

/// Per-frame tracked objects, sorted ascending by track id.
pub fn associate_tracks(
    frames: &[Vec<Detection>],
    gate_m: f64,
) -> Result<Vec<Vec<TrackedObject>>, TrackingError> {
    Ok(assign_track_ids(frames, gate_m)?
        .into_iter()
        .map(|frame| {
            let mut objs: Vec<TrackedObject> =
                frame.iter().map(Assignment::to_tracked_object).collect();
            objs.sort_by_key(|o| o.track_id);
            objs
        })
        .collect())
}
