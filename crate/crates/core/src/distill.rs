//! Temperature-scaled knowledge distillation at desk scale.
//!
//! The loss for one example is
//!
//! ```text
//! loss = α · τ² · KL(softmax(t/τ) ‖ softmax(s/τ)) + (1 − α) · CE(softmax(s), y)
//! ```
//!
//! with `s` the student logits, `t` the teacher logits and `y` an optional hard
//! label. Without a label the hard term drops out and α is treated as 1.
//! The student is a linear head over embeddings, trained by plain mini-batch
//! SGD with seeded shuffling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lora::{DenseMatrix, LoraError};
use crate::model::Embedding;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KdError {
    #[error("logit vectors have lengths {student} and {teacher}")]
    LengthMismatch { student: usize, teacher: usize },
    #[error("need at least two logits")]
    EmptyLogits,
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradCheckError {
    #[error("loss is not finite at parameter {0}")]
    NonFiniteLoss(usize),
    #[error("epsilon must be positive")]
    BadEpsilon,
    #[error("gradient has {got} entries for {expected} parameters")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistillError {
    #[error(transparent)]
    Kd(#[from] KdError),
    #[error(transparent)]
    Shape(#[from] LoraError),
    #[error("no training data")]
    NoData,
    #[error("input dimension {got} does not match model dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{got} labels for {expected} examples")]
    LabelCount { expected: usize, got: usize },
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss {
        epoch: usize,
        history: Vec<EpochStats>,
    },
}

/// Numerically stable `log(softmax(z / tau))`.
pub fn log_softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = z.iter().map(|v| (v - max) / tau).collect();
    let lse = shifted.iter().map(|v| v.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|v| v - lse).collect()
}

pub fn softmax(z: &[f64], tau: f64) -> Vec<f64> {
    log_softmax(z, tau).into_iter().map(f64::exp).collect()
}

/// Loss value with its unweighted components. `kd` already carries the τ²
/// factor; `ce` is 0 when no label was given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KdLoss {
    pub loss: f64,
    pub kd: f64,
    pub ce: f64,
}

fn check_logits(student: &[f64], teacher: &[f64], label: Option<usize>) -> Result<(), KdError> {
    if student.len() != teacher.len() {
        return Err(KdError::LengthMismatch {
            student: student.len(),
            teacher: teacher.len(),
        });
    }
    if student.len() < 2 {
        return Err(KdError::EmptyLogits);
    }
    if let Some(l) = label {
        if l >= student.len() {
            return Err(KdError::InvalidLabel {
                label: l,
                classes: student.len(),
            });
        }
    }
    Ok(())
}

fn check_tau_alpha(tau: f64, alpha: f64) -> Result<(), KdError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(KdError::InvalidConfig(format!(
            "temperature {tau} must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(KdError::InvalidConfig(format!(
            "kd weight {alpha} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Distillation loss together with its gradient with respect to the student
/// logits.
pub fn kd_loss_with_grad(
    student: &[f64],
    teacher: &[f64],
    label: Option<usize>,
    tau: f64,
    alpha: f64,
) -> Result<(KdLoss, Vec<f64>), KdError> {
    check_logits(student, teacher, label)?;
    check_tau_alpha(tau, alpha)?;
    let alpha = if label.is_some() { alpha } else { 1.0 };

    let log_ps = log_softmax(student, tau);
    let log_pt = log_softmax(teacher, tau);
    let kl: f64 = log_pt
        .iter()
        .zip(&log_ps)
        .map(|(lt, ls)| lt.exp() * (lt - ls))
        .sum();
    // KL is non-negative; summation can leave a tiny negative residue.
    let kd = kl.max(0.0) * tau * tau;

    // d(τ² KL)/ds = τ (p_s − p_t)
    let mut grad: Vec<f64> = log_ps
        .iter()
        .zip(&log_pt)
        .map(|(ls, lt)| alpha * tau * (ls.exp() - lt.exp()))
        .collect();

    let ce = match label {
        Some(y) => {
            let log_q = log_softmax(student, 1.0);
            for (i, (g, lq)) in grad.iter_mut().zip(&log_q).enumerate() {
                let onehot = if i == y { 1.0 } else { 0.0 };
                *g += (1.0 - alpha) * (lq.exp() - onehot);
            }
            -log_q[y]
        }
        None => 0.0,
    };
    Ok((
        KdLoss {
            loss: alpha * kd + (1.0 - alpha) * ce,
            kd,
            ce,
        },
        grad,
    ))
}

pub fn kd_loss(
    student: &[f64],
    teacher: &[f64],
    label: Option<usize>,
    tau: f64,
    alpha: f64,
) -> Result<KdLoss, KdError> {
    kd_loss_with_grad(student, teacher, label, tau, alpha).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares an analytic gradient with central differences
/// `(f(p + ε) − f(p − ε)) / 2ε`, coordinate by coordinate. The relative error
/// uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn grad_check(
    f: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    params: &[f64],
    eps: f64,
) -> Result<GradCheck, GradCheckError> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(GradCheckError::BadEpsilon);
    }
    if analytic.len() != params.len() {
        return Err(GradCheckError::LengthMismatch {
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let mut p = params.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let up = f(&p);
        p[i] = orig - eps;
        let down = f(&p);
        p[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(GradCheckError::NonFiniteLoss(i));
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: rel,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}

/// Anything that maps an embedding to class logits without side effects.
pub trait Teacher {
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &[f64]) -> Vec<f64>;
}

/// Linear classifier head `W x + b`, used both as a stand-in teacher and as
/// the student.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    weights: DenseMatrix,
    bias: Vec<f64>,
}

/// On-disk form: `{"weights": [[...], ...], "bias": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHeadFile {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self, LoraError> {
        if bias.len() != weights.rows() {
            return Err(LoraError::ShapeMismatch(format!(
                "bias of length {} for {} classes",
                bias.len(),
                weights.rows()
            )));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(LoraError::NonFinite);
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(classes, dim),
            bias: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Weights (row-major) followed by bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.data().to_vec();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn with_params(&self, params: &[f64]) -> Self {
        let n = self.weights.data().len();
        let mut out = self.clone();
        out.weights.data_mut().copy_from_slice(&params[..n]);
        out.bias.copy_from_slice(&params[n..]);
        out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .data()
            .chunks_exact(self.dim())
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Mean loss over a batch and its gradient with respect to [`params`](Self::params).
    pub fn loss_and_grad(
        &self,
        xs: &[&[f64]],
        teacher_logits: &[&[f64]],
        labels: Option<&[usize]>,
        tau: f64,
        alpha: f64,
    ) -> Result<(KdLoss, Vec<f64>), KdError> {
        let (c, d) = (self.classes(), self.dim());
        let mut grad = vec![0.0; c * d + c];
        let mut total = KdLoss {
            loss: 0.0,
            kd: 0.0,
            ce: 0.0,
        };
        for (i, (x, t)) in xs.iter().zip(teacher_logits).enumerate() {
            let s = self.forward(x);
            let label = labels.map(|l| l[i]);
            let (l, g) = kd_loss_with_grad(&s, t, label, tau, alpha)?;
            total.loss += l.loss;
            total.kd += l.kd;
            total.ce += l.ce;
            for (row, gk) in g.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    grad[row * d + j] += gk * xj;
                }
                grad[c * d + row] += gk;
            }
        }
        let n = xs.len().max(1) as f64;
        grad.iter_mut().for_each(|v| *v /= n);
        total.loss /= n;
        total.kd /= n;
        total.ce /= n;
        Ok((total, grad))
    }
}

impl Teacher for LinearHead {
    fn num_classes(&self) -> usize {
        self.classes()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x)
    }
}

impl TryFrom<LinearHeadFile> for LinearHead {
    type Error = LoraError;

    fn try_from(f: LinearHeadFile) -> Result<Self, Self::Error> {
        LinearHead::new(DenseMatrix::from_rows(&f.weights)?, f.bias)
    }
}

impl From<&LinearHead> for LinearHeadFile {
    fn from(h: &LinearHead) -> Self {
        LinearHeadFile {
            weights: (0..h.classes())
                .map(|r| h.weights.row(r).to_vec())
                .collect(),
            bias: h.bias.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub temperature: f64,
    pub kd_weight: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for KdConfig {
    /// τ = 0.07, lr = 5e-3, batch 1024, 100 epochs, pure distillation.
    fn default() -> Self {
        KdConfig {
            temperature: 0.07,
            kd_weight: 1.0,
            learning_rate: 5e-3,
            batch_size: 1024,
            epochs: 100,
            seed: 0,
        }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<(), KdError> {
        check_tau_alpha(self.temperature, self.kd_weight)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(KdError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(KdError::InvalidConfig(
                "batch size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// End-of-epoch evaluation over the full training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub kd_component: f64,
    pub ce_component: f64,
    /// Fraction of examples where student and teacher argmax agree.
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub student: LinearHead,
    pub history: Vec<EpochStats>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Trains `student` to mimic `teacher` on `data`. Deterministic for a given
/// seed: shuffling is the only randomness.
pub fn distill(
    teacher: &dyn Teacher,
    student: LinearHead,
    data: &[Embedding],
    labels: Option<&[usize]>,
    cfg: &KdConfig,
) -> Result<DistillOutcome, DistillError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DistillError::NoData);
    }
    if let Some(bad) = data.iter().find(|e| e.dim() != student.dim()) {
        return Err(DistillError::DimMismatch {
            expected: student.dim(),
            got: bad.dim(),
        });
    }
    if teacher.num_classes() != student.classes() {
        return Err(KdError::LengthMismatch {
            student: student.classes(),
            teacher: teacher.num_classes(),
        }
        .into());
    }
    if let Some(l) = labels {
        if l.len() != data.len() {
            return Err(DistillError::LabelCount {
                expected: data.len(),
                got: l.len(),
            });
        }
    }

    let xs: Vec<&[f64]> = data.iter().map(Embedding::vector).collect();
    let t_logits: Vec<Vec<f64>> = xs.iter().map(|x| teacher.logits(x)).collect();
    let t_refs: Vec<&[f64]> = t_logits.iter().map(Vec::as_slice).collect();
    let t_argmax: Vec<usize> = t_logits.iter().map(|t| argmax(t)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = student.params();
    let mut model = student;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i]).collect();
            let bt: Vec<&[f64]> = batch.iter().map(|&i| t_refs[i]).collect();
            let bl: Option<Vec<usize>> = labels.map(|l| batch.iter().map(|&i| l[i]).collect());
            let (_, grad) =
                model.loss_and_grad(&bx, &bt, bl.as_deref(), cfg.temperature, cfg.kd_weight)?;
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            model = model.with_params(&params);
        }

        let (l, _) = model.loss_and_grad(&xs, &t_refs, labels, cfg.temperature, cfg.kd_weight)?;
        let agree = xs
            .iter()
            .zip(&t_argmax)
            .filter(|(x, t)| argmax(&model.forward(x)) == **t)
            .count();
        if !l.loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(DistillError::DivergedLoss { epoch, history });
        }
        history.push(EpochStats {
            epoch,
            loss: l.loss,
            kd_component: l.kd,
            ce_component: l.ce,
            agreement: agree as f64 / xs.len() as f64,
        });
    }
    Ok(DistillOutcome {
        student: model,
        history,
    })
}

/// `epoch,loss,kd_component,ce_component,agreement` rows.
pub fn write_history_csv<W: std::io::Write>(
    history: &[EpochStats],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "epoch,loss,kd_component,ce_component,agreement")?;
    for h in history {
        writeln!(
            w,
            "{},{},{},{},{}",
            h.epoch, h.loss, h.kd_component, h.ce_component, h.agreement
        )?;
    }
    Ok(())
}

/// Two-class toy problem: a fixed random linear teacher over `dim`-dimensional
/// points drawn uniformly from `[-1, 1]^dim`, plus a zero student.
pub fn toy_problem(n: usize, dim: usize, seed: u64) -> (LinearHead, LinearHead, Vec<Embedding>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = DenseMatrix::random(2, dim, 1.0, &mut rng);
    let bias = vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    let teacher = LinearHead::new(weights, bias).expect("shapes agree");
    let data = (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Embedding::new(format!("p{i}"), v).expect("nonzero with probability one")
        })
        .collect();
    (teacher, LinearHead::zeros(2, dim), data)
}

/// Settings under which [`toy_problem`] converges well inside 100 epochs.
pub fn toy_config(seed: u64) -> KdConfig {
    KdConfig {
        learning_rate: 0.05,
        batch_size: 32,
        seed,
        ..KdConfig::default()
    }
}
