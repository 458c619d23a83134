//! Low-rank adapters on dense layers: `h = W0 x + B (A x)`.
//!
//! `W0` (d x k) stays frozen; only `B` (d x r) and `A` (r x k) are trained.
//! `B` starts at zero so a freshly initialised adapter leaves the frozen layer
//! unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoraError {
    #[error("rank {r} exceeds min(d, k) = {max}")]
    RankTooLarge { r: usize, max: usize },
    #[error("rank must be positive")]
    ZeroRank,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("dimensions must be positive")]
    ZeroDim,
}

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LoraError> {
        if rows == 0 || cols == 0 {
            return Err(LoraError::ZeroDim);
        }
        if data.len() != rows * cols {
            return Err(LoraError::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(LoraError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LoraError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LoraError::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LoraError> {
        if x.len() != self.cols {
            return Err(LoraError::ShapeMismatch(format!(
                "vector of length {} for {}x{} matrix",
                x.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, LoraError> {
        if self.cols != other.rows {
            return Err(LoraError::ShapeMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.data[i * self.cols + p];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(p);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix, LoraError> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(LoraError::ShapeMismatch("matrix sum".into()));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn scale(mut self, s: f64) -> Self {
        self.data.iter_mut().for_each(|v| *v *= s);
        self
    }
}

/// Trainable low-rank update `ΔW = scale · B A`.
///
/// `scale` is 1 unless [`LoraAdapter::with_alpha`] turns on the conventional
/// `alpha / r` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    b: DenseMatrix,
    a: DenseMatrix,
    scale: f64,
}

fn check_rank(d: usize, k: usize, r: usize) -> Result<(), LoraError> {
    if d == 0 || k == 0 {
        return Err(LoraError::ZeroDim);
    }
    if r == 0 {
        return Err(LoraError::ZeroRank);
    }
    let max = d.min(k);
    if r > max {
        return Err(LoraError::RankTooLarge { r, max });
    }
    Ok(())
}

impl LoraAdapter {
    pub fn new(b: DenseMatrix, a: DenseMatrix) -> Result<Self, LoraError> {
        if b.cols != a.rows {
            return Err(LoraError::ShapeMismatch(format!(
                "B is {}x{} but A is {}x{}",
                b.rows, b.cols, a.rows, a.cols
            )));
        }
        check_rank(b.rows, a.cols, b.cols)?;
        Ok(Self { b, a, scale: 1.0 })
    }

    /// Multiplies the update by `alpha / r`.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.scale = alpha / self.rank() as f64;
        self
    }

    pub fn rank(&self) -> usize {
        self.a.rows
    }

    /// Output dimension.
    pub fn d(&self) -> usize {
        self.b.rows
    }

    /// Input dimension.
    pub fn k(&self) -> usize {
        self.a.cols
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn check_base(&self, w0: &DenseMatrix) -> Result<(), LoraError> {
        if w0.rows != self.d() || w0.cols != self.k() {
            return Err(LoraError::ShapeMismatch(format!(
                "W0 is {}x{}, adapter is {}x{}",
                w0.rows,
                w0.cols,
                self.d(),
                self.k()
            )));
        }
        Ok(())
    }
}

/// Seeded initialisation: `A` uniform in `±1/sqrt(k)`, `B` zero.
pub fn init_adapter(d: usize, k: usize, r: usize, seed: u64) -> Result<LoraAdapter, LoraError> {
    check_rank(d, k, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DenseMatrix::random(r, k, 1.0 / (k as f64).sqrt(), &mut rng);
    LoraAdapter::new(DenseMatrix::zeros(d, r), a)
}

/// `W0 x + B (A x)`, two thin passes; `B A` is never formed.
pub fn lora_forward(
    w0: &DenseMatrix,
    adapter: &LoraAdapter,
    x: &[f64],
) -> Result<Vec<f64>, LoraError> {
    adapter.check_base(w0)?;
    let mut h = w0.matvec(x)?;
    let ax = adapter.a.matvec(x)?;
    let bax = adapter.b.matvec(&ax)?;
    for (hi, di) in h.iter_mut().zip(bax) {
        *hi += adapter.scale * di;
    }
    Ok(h)
}

/// Dense merged weights `W0 + B A` for deployment.
pub fn lora_merge(w0: &DenseMatrix, adapter: &LoraAdapter) -> Result<DenseMatrix, LoraError> {
    adapter.check_base(w0)?;
    let delta = adapter.b.matmul(&adapter.a)?.scale(adapter.scale);
    w0.add(&delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamCount {
    pub trainable: u64,
    pub frozen: u64,
    pub ratio: f64,
}

/// `r (d + k)` trainable against `d k` frozen parameters.
pub fn trainable_param_count(d: usize, k: usize, r: usize) -> Result<ParamCount, LoraError> {
    check_rank(d, k, r)?;
    let trainable = (r * (d + k)) as u64;
    let frozen = (d * k) as u64;
    Ok(ParamCount {
        trainable,
        frozen,
        ratio: trainable as f64 / frozen as f64,
    })
}

/// On-disk adapter: `{"d","k","r","A","B"}` with row-major flat matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterFile {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

impl From<&LoraAdapter> for AdapterFile {
    fn from(ad: &LoraAdapter) -> Self {
        AdapterFile {
            d: ad.d(),
            k: ad.k(),
            r: ad.rank(),
            a: ad.a.data.clone(),
            b: ad.b.data.clone(),
        }
    }
}

impl TryFrom<AdapterFile> for LoraAdapter {
    type Error = LoraError;

    fn try_from(f: AdapterFile) -> Result<Self, Self::Error> {
        check_rank(f.d, f.k, f.r)?;
        LoraAdapter::new(
            DenseMatrix::new(f.d, f.r, f.b)?,
            DenseMatrix::new(f.r, f.k, f.a)?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let w0 = DenseMatrix::identity(2);
        let b = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let ad = LoraAdapter::new(b, a).unwrap();
        assert_eq!(lora_forward(&w0, &ad, &[1.0, 2.0]).unwrap(), vec![3.0, 2.0]);
        let merged = lora_merge(&w0, &ad).unwrap();
        assert_eq!(merged.data(), &[1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn fresh_adapter_is_identity_update() {
        let ad = init_adapter(5, 3, 2, 11).unwrap();
        assert!(ad.b().data().iter().all(|v| *v == 0.0));
        assert!(ad.a().data().iter().any(|v| *v != 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w0 = DenseMatrix::random(5, 3, 1.0, &mut rng);
        let x = [0.3, -1.2, 2.5];
        assert_eq!(lora_forward(&w0, &ad, &x).unwrap(), w0.matvec(&x).unwrap());
        assert_eq!(lora_merge(&w0, &ad).unwrap(), w0);
    }

    #[test]
    fn init_is_deterministic_and_checks_rank() {
        assert_eq!(init_adapter(8, 6, 3, 42), init_adapter(8, 6, 3, 42));
        assert_ne!(init_adapter(8, 6, 3, 42), init_adapter(8, 6, 3, 43));
        assert_eq!(
            init_adapter(4, 6, 5, 0),
            Err(LoraError::RankTooLarge { r: 5, max: 4 })
        );
        assert_eq!(init_adapter(4, 6, 0, 0), Err(LoraError::ZeroRank));
    }

    #[test]
    fn param_counts() {
        let p = trainable_param_count(1024, 1024, 16).unwrap();
        assert_eq!((p.trainable, p.frozen), (32768, 1_048_576));
        assert_eq!(p.ratio, 0.03125);
        assert_eq!(trainable_param_count(4, 6, 2).unwrap().trainable, 20);
        assert_eq!(trainable_param_count(4, 6, 0), Err(LoraError::ZeroRank));
    }

    #[test]
    fn alpha_scaling() {
        let w0 = DenseMatrix::zeros(2, 2);
        let b = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = DenseMatrix::identity(2);
        let ad = LoraAdapter::new(b, a).unwrap().with_alpha(4.0);
        assert_eq!(lora_forward(&w0, &ad, &[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn shape_errors() {
        let ad = init_adapter(3, 2, 1, 0).unwrap();
        assert!(matches!(
            lora_forward(&DenseMatrix::zeros(2, 3), &ad, &[0.0, 0.0]),
            Err(LoraError::ShapeMismatch(_))
        ));
        assert!(matches!(
            lora_forward(&DenseMatrix::zeros(3, 2), &ad, &[0.0]),
            Err(LoraError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn adapter_file_roundtrip() {
        let mut ad = init_adapter(4, 3, 2, 9).unwrap();
        ad.b.data_mut()[3] = 0.25;
        let json = serde_json::to_string(&AdapterFile::from(&ad)).unwrap();
        assert!(json.contains("\"A\":") && json.contains("\"B\":"));
        let back: AdapterFile = serde_json::from_str(&json).unwrap();
        assert_eq!(LoraAdapter::try_from(back).unwrap(), ad);
    }

    proptest! {
        #[test]
        fn ratio_below_one_when_rank_small(d in 1usize..200, k in 1usize..200, r in 1usize..50) {
            prop_assume!(r <= d.min(k));
            let p = trainable_param_count(d, k, r).unwrap();
            if (r * (d + k)) < d * k {
                prop_assert!(p.ratio < 1.0);
            }
        }
    }
}
