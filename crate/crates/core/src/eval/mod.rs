//! Detector evaluation over IoU.
//!
//! Recall is the fraction of ground-truth boxes whose best IoU against *any*
//! prediction reaches `t_iou`; accuracy is the fraction of predictions whose
//! best IoU against any ground-truth box reaches `t_iou`. There is no
//! one-to-one assignment: a single prediction can cover several ground-truth
//! boxes. Multi-frame results pool the hit counts and totals before dividing.

mod filter;
mod sweep;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use filter::{filter_dual_score, filter_single_score, greedy_nms, FilterError, FilterParams};
pub use sweep::{
    best_operating_point, sweep, write_surface_csv, GridAxis, Metric, Objective, OperatingPoint,
    SweepSurface,
};

use crate::model::{BoundingBox, DetectionCandidate, GroundTruthSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("candidate references frame {0} which is not listed in the ground truth")]
    UnknownFrame(String),
    #[error("t_iou {0} must lie in (0, 1)")]
    InvalidIouThreshold(f64),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("surface has no cells")]
    EmptySurface,
    #[error("no cell satisfies the objective")]
    NoFeasibleCell,
}

/// Intersection over union of two boxes; 0 for disjoint boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x2().min(b.x2()) - a.x1().max(b.x1());
    let ih = a.y2().min(b.y2()) - a.y1().max(b.y1());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn best_iou(target: &BoundingBox, against: &[BoundingBox]) -> f64 {
    against
        .iter()
        .map(|o| iou(target, o))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Number of `targets` whose maximum IoU over `against` is at least `t_iou`.
fn hits(targets: &[BoundingBox], against: &[BoundingBox], t_iou: f64) -> usize {
    if against.is_empty() {
        return 0;
    }
    targets
        .iter()
        .filter(|t| best_iou(t, against) >= t_iou)
        .count()
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Recall for one set of boxes. `None` when there is no ground truth.
pub fn recall(preds: &[BoundingBox], gts: &[BoundingBox], t_iou: f64) -> Option<f64> {
    ratio(hits(gts, preds, t_iou), gts.len())
}

/// Accuracy (precision-like) for one set of boxes. `None` when there are no predictions.
pub fn accuracy(preds: &[BoundingBox], gts: &[BoundingBox], t_iou: f64) -> Option<f64> {
    ratio(hits(preds, gts, t_iou), preds.len())
}

fn check_t_iou(t_iou: f64) -> Result<(), EvalError> {
    if !(t_iou > 0.0 && t_iou < 1.0) {
        return Err(EvalError::InvalidIouThreshold(t_iou));
    }
    Ok(())
}

/// Pooled recall/accuracy for one filter setting. `None` marks an undefined
/// metric (empty denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub n_predictions: usize,
    pub n_ground_truth: usize,
    pub recall_hits: usize,
    pub accuracy_hits: usize,
    pub t_iou: f64,
}

impl EvalReport {
    fn from_counts(
        recall_hits: usize,
        accuracy_hits: usize,
        n_predictions: usize,
        n_ground_truth: usize,
        t_iou: f64,
    ) -> Self {
        EvalReport {
            recall: ratio(recall_hits, n_ground_truth),
            accuracy: ratio(accuracy_hits, n_predictions),
            n_predictions,
            n_ground_truth,
            recall_hits,
            accuracy_hits,
            t_iou,
        }
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Recall => self.recall,
            Metric::Accuracy => self.accuracy,
        }
    }
}

/// Candidates grouped by frame against their ground truth, ready for repeated
/// evaluation under different filter settings.
#[derive(Debug, Clone)]
pub struct FrameSet<'a> {
    frames: Vec<(&'a [BoundingBox], Vec<DetectionCandidate>)>,
}

impl<'a> FrameSet<'a> {
    pub fn new(cands: &[DetectionCandidate], gts: &'a GroundTruthSet) -> Result<Self, EvalError> {
        let mut by_frame: BTreeMap<&str, Vec<DetectionCandidate>> = BTreeMap::new();
        for c in cands {
            if !gts.contains(&c.frame_id) {
                return Err(EvalError::UnknownFrame(c.frame_id.clone()));
            }
            by_frame
                .entry(c.frame_id.as_str())
                .or_default()
                .push(c.clone());
        }
        let frames = gts
            .frames()
            .map(|(id, boxes)| (boxes, by_frame.remove(id).unwrap_or_default()))
            .collect();
        Ok(FrameSet { frames })
    }

    pub fn evaluate(&self, params: &FilterParams, t_iou: f64) -> Result<EvalReport, EvalError> {
        check_t_iou(t_iou)?;
        params.validate()?;
        let (mut rh, mut ah, mut np, mut nt) = (0, 0, 0, 0);
        for (gt, cands) in &self.frames {
            let kept: Vec<BoundingBox> = params.apply(cands)?.iter().map(|c| c.bbox).collect();
            rh += hits(gt, &kept, t_iou);
            ah += hits(&kept, gt, t_iou);
            np += kept.len();
            nt += gt.len();
        }
        Ok(EvalReport::from_counts(rh, ah, np, nt, t_iou))
    }
}

/// Filters every frame's candidates and pools recall/accuracy across frames.
pub fn evaluate(
    cands: &[DetectionCandidate],
    gts: &GroundTruthSet,
    params: &FilterParams,
    t_iou: f64,
) -> Result<EvalReport, EvalError> {
    FrameSet::new(cands, gts)?.evaluate(params, t_iou)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_box;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        validate_box([x1, y1, x2, y2]).unwrap()
    }

    #[test]
    fn iou_cases() {
        let a = bx(0., 0., 1., 1.);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(5., 5., 6., 6.)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(1., 0., 2., 1.)), 0.0);
        // intersection 0.5, union 1.5
        assert!((iou(&a, &bx(0.5, 0., 1.5, 1.)) - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn recall_accuracy_cases() {
        let g1 = bx(0., 0., 10., 10.);
        let g2 = bx(20., 20., 30., 30.);
        assert_eq!(recall(&[g1], &[g1, g2], 0.3), Some(0.5));
        assert_eq!(recall(&[g1, g2], &[g1, g2], 0.3), Some(1.0));
        assert_eq!(recall(&[], &[g1, g2, bx(0., 0., 1., 1.)], 0.3), Some(0.0));
        assert_eq!(recall(&[g1], &[], 0.3), None);

        let far = bx(50., 50., 60., 60.);
        assert_eq!(accuracy(&[g1, far], &[g1], 0.4), Some(0.5));
        assert_eq!(accuracy(&[], &[g1], 0.4), None);
        assert_eq!(accuracy(&[g1, g2, far], &[], 0.4), Some(0.0));
    }

    #[test]
    fn one_prediction_may_cover_several_gts() {
        let p = bx(0., 0., 10., 10.);
        let gts = [bx(0., 0., 10., 9.), bx(0., 1., 10., 10.)];
        assert_eq!(recall(&[p], &gts, 0.5), Some(1.0));
        assert_eq!(accuracy(&[p], &gts, 0.5), Some(1.0));
    }

    fn cand(frame: &str, b: BoundingBox, s: f64) -> DetectionCandidate {
        DetectionCandidate::new(frame, b, s, None).unwrap()
    }

    #[test]
    fn evaluate_pools_frames() {
        let g = bx(0., 0., 10., 10.);
        let mut gts = GroundTruthSet::new();
        gts.insert("a", vec![g]);
        gts.insert("b", vec![g]);
        let p = FilterParams::Single {
            conf: 0.1,
            nms_iou: 0.5,
        };
        let perfect = [cand("a", g, 0.9), cand("b", g, 0.9)];
        let r = evaluate(&perfect, &gts, &p, 0.3).unwrap();
        assert_eq!((r.recall, r.accuracy), (Some(1.0), Some(1.0)));

        // frame a perfect, frame b misses entirely
        let half = [cand("a", g, 0.9), cand("b", bx(50., 50., 60., 60.), 0.9)];
        let r = evaluate(&half, &gts, &p, 0.3).unwrap();
        assert_eq!(r.recall, Some(0.5));
        assert_eq!(r.n_ground_truth, 2);
        assert_eq!(r.n_predictions, 2);

        let stray = [cand("zzz", g, 0.9)];
        assert_eq!(
            evaluate(&stray, &gts, &p, 0.3),
            Err(EvalError::UnknownFrame("zzz".into()))
        );
        assert!(matches!(
            evaluate(&perfect, &gts, &p, 1.0),
            Err(EvalError::InvalidIouThreshold(_))
        ));
    }

    #[test]
    fn evaluate_undefined_metrics() {
        let mut gts = GroundTruthSet::new();
        gts.insert("empty", vec![]);
        let p = FilterParams::Single {
            conf: 0.5,
            nms_iou: 0.5,
        };
        let r = evaluate(&[], &gts, &p, 0.3).unwrap();
        assert_eq!(r.recall, None);
        assert_eq!(r.accuracy, None);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0f64..100.0, 0.0f64..100.0, 0.01f64..50.0, 0.01f64..50.0)
            .prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn iou_scale_invariant(a in arb_box(), b in arb_box(), k in 0.01f64..100.0) {
            let d = iou(&a.scaled(k).unwrap(), &b.scaled(k).unwrap()) - iou(&a, &b);
            prop_assert!(d.abs() <= 1e-12);
        }
    }
}
