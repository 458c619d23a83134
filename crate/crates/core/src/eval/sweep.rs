//! Exhaustive two-axis hyperparameter sweeps and operating-point selection.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::Serialize;

use super::{check_t_iou, EvalError, EvalReport, FilterParams, FrameSet};
use crate::model::{DetectionCandidate, GroundTruthSet};

/// Inclusive arithmetic grid `start, start+step, ..., <= stop` inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub start: f64,
    pub step: f64,
    pub stop: f64,
}

impl Default for GridAxis {
    fn default() -> Self {
        GridAxis {
            start: 0.0,
            step: 0.1,
            stop: 1.0,
        }
    }
}

impl GridAxis {
    pub fn new(start: f64, step: f64, stop: f64) -> Result<Self, EvalError> {
        let axis = GridAxis { start, step, stop };
        axis.validate()?;
        Ok(axis)
    }

    fn validate(&self) -> Result<(), EvalError> {
        let GridAxis { start, step, stop } = *self;
        if !(step.is_finite() && step > 0.0) {
            return Err(EvalError::InvalidGrid(format!(
                "step {step} must be positive"
            )));
        }
        if !(0.0 <= start && start <= stop && stop <= 1.0) {
            return Err(EvalError::InvalidGrid(format!(
                "need 0 <= start <= stop <= 1, got {start}..{stop}"
            )));
        }
        Ok(())
    }

    /// Grid values, snapped to 12 decimals so `0.1 * 3` reads back as `0.3`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let v = self.start + i as f64 * self.step;
                ((v * 1e12).round() / 1e12).min(1.0)
            })
            .collect()
    }
}

impl FromStr for GridAxis {
    type Err = EvalError;

    /// Parses `start:step:stop`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || EvalError::InvalidGrid(format!("expected start:step:stop, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?;
        GridAxis::new(nums[0], nums[1], nums[2])
    }
}

impl fmt::Display for GridAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.step, self.stop)
    }
}

/// Row-major grid of reports: `cells[i * axis2.len() + j]` is the report at
/// `(axis1_values[i], axis2_values[j])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSurface {
    pub axis1_name: String,
    pub axis2_name: String,
    pub axis1_values: Vec<f64>,
    pub axis2_values: Vec<f64>,
    pub cells: Vec<EvalReport>,
}

impl SweepSurface {
    pub fn cell(&self, i: usize, j: usize) -> &EvalReport {
        &self.cells[i * self.axis2_values.len() + j]
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `(axis1, axis2, report)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, &EvalReport)> {
        let n2 = self.axis2_values.len();
        self.cells
            .iter()
            .enumerate()
            .map(move |(idx, r)| (self.axis1_values[idx / n2], self.axis2_values[idx % n2], r))
    }
}

/// Evaluates every grid cell. `base` fixes the detector mode (and, for dual
/// mode, the optional NMS override); the axes replace its two thresholds.
/// Cells are independent and are evaluated in parallel when the `parallel`
/// feature is on; output order never depends on scheduling.
pub fn sweep(
    cands: &[DetectionCandidate],
    gts: &GroundTruthSet,
    base: &FilterParams,
    axis1: &GridAxis,
    axis2: &GridAxis,
    t_iou: f64,
) -> Result<SweepSurface, EvalError> {
    check_t_iou(t_iou)?;
    axis1.validate()?;
    axis2.validate()?;
    let frames = FrameSet::new(cands, gts)?;
    let v1 = axis1.values();
    let v2 = axis2.values();
    let grid: Vec<(f64, f64)> = v1
        .iter()
        .flat_map(|&a| v2.iter().map(move |&b| (a, b)))
        .collect();
    let eval_cell = |&(a, b): &(f64, f64)| frames.evaluate(&base.with_axes(a, b), t_iou);

    #[cfg(feature = "parallel")]
    let cells: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        grid.par_iter().map(eval_cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Result<Vec<_>, _> = grid.iter().map(eval_cell).collect();

    let (n1, n2) = base.axis_names();
    Ok(SweepSurface {
        axis1_name: n1.to_string(),
        axis2_name: n2.to_string(),
        axis1_values: v1,
        axis2_values: v2,
        cells: cells?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Recall,
    Accuracy,
}

impl Metric {
    pub fn other(self) -> Metric {
        match self {
            Metric::Recall => Metric::Accuracy,
            Metric::Accuracy => Metric::Recall,
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recall" => Ok(Metric::Recall),
            "accuracy" => Ok(Metric::Accuracy),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Highest value of the metric; cells where it is undefined are skipped.
    Maximize(Metric),
    /// Only cells with `metric >= bound` are feasible; among those the other
    /// metric is maximized.
    MinPredicate { metric: Metric, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub axis1: f64,
    pub axis2: f64,
    pub report: EvalReport,
}

/// Picks the best cell. Ties go to the smaller axis1 value, then the smaller
/// axis2 value.
pub fn best_operating_point(
    surface: &SweepSurface,
    objective: Objective,
) -> Result<OperatingPoint, EvalError> {
    if surface.is_empty() {
        return Err(EvalError::EmptySurface);
    }
    // Undefined ranks below every defined value.
    let key = |r: &EvalReport| -> Option<f64> {
        match objective {
            Objective::Maximize(m) => r.metric(m),
            Objective::MinPredicate { metric, .. } => r.metric(metric.other()),
        }
    };
    let feasible = |r: &EvalReport| match objective {
        Objective::Maximize(m) => r.metric(m).is_some(),
        Objective::MinPredicate { metric, bound } => r.metric(metric).is_some_and(|v| v >= bound),
    };

    let mut best: Option<(f64, f64, &EvalReport)> = None;
    for (a, b, r) in surface.iter().filter(|(_, _, r)| feasible(r)) {
        let better = match best {
            None => true,
            Some((_, _, cur)) => match (key(r), key(cur)) {
                (Some(x), Some(y)) => x > y,
                (Some(_), None) => true,
                _ => false,
            },
        };
        if better {
            best = Some((a, b, r));
        }
    }
    best.map(|(axis1, axis2, r)| OperatingPoint {
        axis1,
        axis2,
        report: *r,
    })
    .ok_or(EvalError::NoFeasibleCell)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".to_string(), |x| x.to_string())
}

/// Writes `axis1,axis2,recall,accuracy,n_pred,n_gt` rows in row-major order.
/// With `clip = Some(c)`, rows whose axis values exceed `c` are left out.
pub fn write_surface_csv<W: Write>(
    surface: &SweepSurface,
    mut w: W,
    clip: Option<f64>,
) -> io::Result<()> {
    writeln!(w, "axis1,axis2,recall,accuracy,n_pred,n_gt")?;
    for (a, b, r) in surface.iter() {
        if clip.is_some_and(|c| a > c || b > c) {
            continue;
        }
        writeln!(
            w,
            "{},{},{},{},{},{}",
            a,
            b,
            fmt_metric(r.recall),
            fmt_metric(r.accuracy),
            r.n_predictions,
            r.n_ground_truth
        )?;
    }
    Ok(())
}
