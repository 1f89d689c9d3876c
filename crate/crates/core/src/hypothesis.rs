//! Random hypothesis batches and their predictions on the training sample.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{DflError, Result};
use crate::rng::{stream_rng, Stream};

/// Default batch size.
pub const DEFAULT_M: usize = 5000;
/// Tolerance on `|K - Kᵀ|` accepted by [`predict_kernel`].
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Linear,
    /// `exp(-‖a - b‖² / (2 γ²))`
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * gamma * gamma)).exp()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(DflError::InvalidArgument(format!("rbf gamma must be > 0, got {gamma}")))
            }
            _ => Ok(()),
        }
    }

    /// RBF with `γ` equal to the median pairwise Euclidean distance between
    /// rows of `x` (at most the first 1000 rows are used).
    pub fn rbf_median_heuristic(x: &DMatrix<f64>) -> Self {
        let rows: Vec<Vec<f64>> = x.row_iter().take(1000).map(|r| r.iter().copied().collect()).collect();
        let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                d.push(rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
            }
        }
        d.sort_by(f64::total_cmp);
        let med = if d.is_empty() { 1.0 } else { d[d.len() / 2] };
        KernelSpec::Rbf { gamma: if med > 0.0 { med } else { 1.0 } }
    }

    pub fn tag(&self) -> (u8, f64) {
        match *self {
            KernelSpec::Linear => (0, 0.0),
            KernelSpec::Rbf { gamma } => (1, gamma),
        }
    }

    pub fn from_tag(tag: u8, gamma: f64) -> Result<Self> {
        match tag {
            0 => Ok(KernelSpec::Linear),
            1 => Ok(KernelSpec::Rbf { gamma }),
            t => Err(DflError::Format(format!("unknown kernel tag {t}"))),
        }
    }
}

/// `m` linear hypotheses; row `t` holds the weight vector `h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHypothesisBatch {
    pub weights: DMatrix<f64>,
    pub sigma: f64,
    pub seed: u64,
}

/// `m` kernel hypotheses `h_t = Σ_i c_ti φ(x_i)`; row `t` of `coeffs` holds
/// `c_t1..c_tn`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelHypothesisBatch {
    pub coeffs: DMatrix<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub kernel: KernelSpec,
}

/// Row `t` holds `(h_t(x_1), …, h_t(x_n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub values: DMatrix<f64>,
}

impl PredictionMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DflError::InvalidArgument("non-finite prediction".into()));
        }
        Ok(Self { values })
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.row(t).iter().copied().collect()
    }

    /// Row-major copy of the values.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.values.transpose().as_slice().to_vec()
    }

    pub fn from_row_major(m: usize, n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * n {
            return Err(DflError::Dimension(format!("{} values for {m}x{n}", data.len())));
        }
        Self::new(DMatrix::from_row_slice(m, n, data))
    }
}

fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(DflError::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if rows == 0 || cols == 0 {
        return Err(DflError::InvalidArgument(format!("empty batch shape {rows}x{cols}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| DflError::InvalidArgument(e.to_string()))?;
    let mut rng = stream_rng(seed, Stream::Hypothesis);
    // filled row by row so that row t is the t-th block of the stream
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn generate_linear(m: usize, p: usize, sigma: f64, seed: u64) -> Result<LinearHypothesisBatch> {
    Ok(LinearHypothesisBatch { weights: gaussian_matrix(m, p, sigma, seed)?, sigma, seed })
}

pub fn generate_kernel(
    m: usize,
    n: usize,
    sigma: f64,
    seed: u64,
    kernel: KernelSpec,
) -> Result<KernelHypothesisBatch> {
    kernel.validate()?;
    Ok(KernelHypothesisBatch { coeffs: gaussian_matrix(m, n, sigma, seed)?, sigma, seed, kernel })
}

/// Entry `(t, i) = ⟨h_t, x_i⟩`.
pub fn predict_linear(batch: &LinearHypothesisBatch, x: &DMatrix<f64>) -> Result<PredictionMatrix> {
    if batch.weights.ncols() != x.ncols() {
        return Err(DflError::Dimension(format!(
            "hypotheses have {} parameters, data has {} features",
            batch.weights.ncols(),
            x.ncols()
        )));
    }
    PredictionMatrix::new(&batch.weights * x.transpose())
}

/// `C · K`, i.e. `h_t(x_j) = Σ_i c_ti K(x_i, x_j)`.
pub fn predict_kernel(batch: &KernelHypothesisBatch, gram: &DMatrix<f64>) -> Result<PredictionMatrix> {
    check_symmetric(gram)?;
    if batch.coeffs.ncols() != gram.nrows() {
        return Err(DflError::Dimension(format!(
            "coefficients have {} columns, Gram matrix is {}x{}",
            batch.coeffs.ncols(),
            gram.nrows(),
            gram.ncols()
        )));
    }
    PredictionMatrix::new(&batch.coeffs * gram)
}

pub fn check_symmetric(k: &DMatrix<f64>) -> Result<()> {
    if !k.is_square() {
        return Err(DflError::Dimension(format!("Gram matrix is {}x{}", k.nrows(), k.ncols())));
    }
    let mut worst: f64 = 0.0;
    for i in 0..k.nrows() {
        for j in i + 1..k.ncols() {
            let (a, b) = (k[(i, j)], k[(j, i)]);
            if !a.is_finite() || !b.is_finite() {
                return Err(DflError::InvalidArgument("non-finite Gram entry".into()));
            }
            worst = worst.max((a - b).abs());
        }
    }
    if worst > SYMMETRY_TOL {
        return Err(DflError::NotSymmetric(worst));
    }
    Ok(())
}

/// `K_ij = k(x_i, x_j)`.
pub fn gram_matrix(x: &DMatrix<f64>, kernel: KernelSpec) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    let n = x.nrows();
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| kernel.eval(&rows[i], &rows[j])).collect())
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(k)
}

/// `K_ij = k(a_i, b_j)` for two (possibly different) point sets.
pub fn cross_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, kernel: KernelSpec) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    if a.ncols() != b.ncols() {
        return Err(DflError::Dimension(format!("{} vs {} features", a.ncols(), b.ncols())));
    }
    let ra: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let rb: Vec<Vec<f64>> = b.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(DMatrix::from_fn(ra.len(), rb.len(), |i, j| kernel.eval(&ra[i], &rb[j])))
}
