//! Detector post-processing: confidence filtering with greedy NMS for
//! single-score detectors, and box/text dual thresholds for open-vocabulary
//! detectors.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::iou;
use crate::model::DetectionCandidate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("single-score filter received a dual-score candidate (frame {0})")]
    MixedScoreKinds(String),
    #[error("dual-score filter received a candidate without a secondary score (frame {0})")]
    MissingSecondaryScore(String),
    #[error("threshold {name} = {value} outside [0, 1]")]
    ThresholdRange { name: &'static str, value: f64 },
}

fn check_unit(name: &'static str, value: f64) -> Result<(), FilterError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(FilterError::ThresholdRange { name, value });
    }
    Ok(())
}

/// Which filter to apply and with what thresholds.
///
/// `p1`/`p2` in the CLI map to `conf`/`nms_iou` for single-score detectors and
/// to `box_thresh`/`text_thresh` for dual-score ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum FilterParams {
    Single {
        conf: f64,
        nms_iou: f64,
    },
    Dual {
        box_thresh: f64,
        text_thresh: f64,
        /// Optional NMS after thresholding; off by default.
        #[serde(default)]
        nms_iou: Option<f64>,
    },
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), FilterError> {
        match *self {
            FilterParams::Single { conf, nms_iou } => {
                check_unit("conf", conf)?;
                check_unit("nms_iou", nms_iou)
            }
            FilterParams::Dual {
                box_thresh,
                text_thresh,
                nms_iou,
            } => {
                check_unit("box_thresh", box_thresh)?;
                check_unit("text_thresh", text_thresh)?;
                nms_iou.map_or(Ok(()), |v| check_unit("nms_iou", v))
            }
        }
    }

    /// Same mode with both axis parameters replaced.
    pub fn with_axes(&self, p1: f64, p2: f64) -> Self {
        match *self {
            FilterParams::Single { .. } => FilterParams::Single {
                conf: p1,
                nms_iou: p2,
            },
            FilterParams::Dual { nms_iou, .. } => FilterParams::Dual {
                box_thresh: p1,
                text_thresh: p2,
                nms_iou,
            },
        }
    }

    pub fn axis_names(&self) -> (&'static str, &'static str) {
        match self {
            FilterParams::Single { .. } => ("conf", "nms"),
            FilterParams::Dual { .. } => ("box", "text"),
        }
    }

    /// Applies the filter to the candidates of one frame.
    pub fn apply(
        &self,
        cands: &[DetectionCandidate],
    ) -> Result<Vec<DetectionCandidate>, FilterError> {
        match *self {
            FilterParams::Single { conf, nms_iou } => filter_single_score(cands, conf, nms_iou),
            FilterParams::Dual {
                box_thresh,
                text_thresh,
                nms_iou,
            } => {
                let kept = filter_dual_score(cands, box_thresh, text_thresh)?;
                Ok(match nms_iou {
                    Some(t) => greedy_nms(kept, t, |c| c.score_primary),
                    None => kept,
                })
            }
        }
    }
}

/// Descending by score; ties keep input order.
fn by_score_desc(
    mut cands: Vec<DetectionCandidate>,
    score: impl Fn(&DetectionCandidate) -> f64,
) -> Vec<DetectionCandidate> {
    cands.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap_or(Ordering::Equal));
    cands
}

/// Greedy class-agnostic NMS: a box is suppressed when its IoU with an
/// already-kept box is strictly greater than `nms_iou`.
pub fn greedy_nms(
    cands: Vec<DetectionCandidate>,
    nms_iou: f64,
    score: impl Fn(&DetectionCandidate) -> f64,
) -> Vec<DetectionCandidate> {
    let mut kept: Vec<DetectionCandidate> = Vec::with_capacity(cands.len());
    for c in by_score_desc(cands, score) {
        if kept.iter().all(|k| iou(&k.bbox, &c.bbox) <= nms_iou) {
            kept.push(c);
        }
    }
    kept
}

/// Drops candidates below `conf`, then runs greedy NMS. Output is sorted by
/// descending score.
pub fn filter_single_score(
    cands: &[DetectionCandidate],
    conf: f64,
    nms_iou: f64,
) -> Result<Vec<DetectionCandidate>, FilterError> {
    check_unit("conf", conf)?;
    check_unit("nms_iou", nms_iou)?;
    if let Some(c) = cands.iter().find(|c| c.is_dual_score()) {
        return Err(FilterError::MixedScoreKinds(c.frame_id.clone()));
    }
    let above: Vec<_> = cands
        .iter()
        .filter(|c| c.score_primary >= conf)
        .cloned()
        .collect();
    Ok(greedy_nms(above, nms_iou, |c| c.score_primary))
}

/// Keeps candidates with `score_primary >= box_thresh` and
/// `score_secondary >= text_thresh`, in input order. No NMS.
pub fn filter_dual_score(
    cands: &[DetectionCandidate],
    box_thresh: f64,
    text_thresh: f64,
) -> Result<Vec<DetectionCandidate>, FilterError> {
    check_unit("box_thresh", box_thresh)?;
    check_unit("text_thresh", text_thresh)?;
    let mut kept = Vec::new();
    for c in cands {
        let Some(text) = c.score_secondary else {
            return Err(FilterError::MissingSecondaryScore(c.frame_id.clone()));
        };
        if c.score_primary >= box_thresh && text >= text_thresh {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}
