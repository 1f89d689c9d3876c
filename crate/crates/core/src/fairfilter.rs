//! Third-party selection of fair hypotheses.
//!
//! The third party sees only prediction vectors and its own sensitive vector.
//! It returns the indices of hypotheses whose predictions are (nearly)
//! uncorrelated with `s`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{DflError, Result};
use crate::hypothesis::PredictionMatrix;
use crate::rng::{stream_rng, Stream};
use crate::stats;

/// Tolerance on `|cov(h*, s)|` accepted for a soft-policy reference.
pub const REFERENCE_COV_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Keep `t` iff `|cov(h_t(x), s)| <= rho`.
    Hard { rho: f64 },
    /// Keep `t` with probability `exp(-‖Ŷ_t - h*(x)‖² / (2 σ₂²))`.
    Soft { sigma2: f64 },
}

impl Policy {
    pub fn threshold(&self) -> f64 {
        match *self {
            Policy::Hard { rho } => rho,
            Policy::Soft { sigma2 } => sigma2,
        }
    }
}

/// Indices returned by the third party, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct FairIndexSet {
    pub indices: Vec<usize>,
    pub policy: Policy,
    pub m: usize,
}

impl FairIndexSet {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Errors with [`DflError::NoFairHypotheses`] when nothing was returned.
    pub fn require_nonempty(&self) -> Result<&Self> {
        if self.indices.is_empty() {
            Err(DflError::NoFairHypotheses { m: self.m })
        } else {
            Ok(self)
        }
    }
}

/// Population covariance of a prediction vector with `s`.
pub fn estimate_cov(yhat: &[f64], s: &[f64]) -> Result<f64> {
    if yhat.len() != s.len() {
        return Err(DflError::Dimension(format!("{} predictions vs {} sensitive values", yhat.len(), s.len())));
    }
    if yhat.len() < 2 {
        return Err(DflError::InvalidArgument("covariance needs n >= 2".into()));
    }
    Ok(stats::covariance(yhat, s))
}

fn row_covs(preds: &PredictionMatrix, s: &[f64]) -> Result<Vec<f64>> {
    if preds.n() != s.len() {
        return Err(DflError::Dimension(format!("predictions have {} columns, s has {}", preds.n(), s.len())));
    }
    (0..preds.m())
        .into_par_iter()
        .map(|t| {
            let row: Vec<f64> = preds.values.row(t).iter().copied().collect();
            estimate_cov(&row, s)
        })
        .collect()
}

pub fn hard_filter(preds: &PredictionMatrix, s: &[f64], rho: f64) -> Result<FairIndexSet> {
    if !(rho >= 0.0) {
        return Err(DflError::InvalidArgument(format!("rho must be >= 0, got {rho}")));
    }
    let covs = row_covs(preds, s)?;
    let indices = covs.iter().enumerate().filter(|(_, c)| c.abs() <= rho).map(|(t, _)| t).collect();
    Ok(FairIndexSet { indices, policy: Policy::Hard { rho }, m: preds.m() })
}

/// Acceptance probability of a prediction vector under the soft policy.
pub fn soft_acceptance(row: &[f64], star: &[f64], sigma2: f64) -> f64 {
    let d2: f64 = row.iter().zip(star).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * sigma2 * sigma2)).exp()
}

/// Soft threshold policy. When `s` is given, `star` must have zero
/// covariance with it.
pub fn soft_filter(
    preds: &PredictionMatrix,
    star: &[f64],
    sigma2: f64,
    seed: u64,
    s: Option<&[f64]>,
) -> Result<FairIndexSet> {
    if !(sigma2 > 0.0) {
        return Err(DflError::InvalidArgument(format!("sigma2 must be > 0, got {sigma2}")));
    }
    if star.len() != preds.n() {
        return Err(DflError::Dimension(format!("reference has {} entries, predictions {}", star.len(), preds.n())));
    }
    if let Some(s) = s {
        let c = estimate_cov(star, s)?;
        if c.abs() > REFERENCE_COV_TOL {
            return Err(DflError::InvalidArgument(format!("reference hypothesis has cov {c:e} with s")));
        }
    }
    let probs: Vec<f64> = (0..preds.m())
        .into_par_iter()
        .map(|t| {
            let row: Vec<f64> = preds.values.row(t).iter().copied().collect();
            soft_acceptance(&row, star, sigma2)
        })
        .collect();
    // one uniform per row in row order, so the result does not depend on scheduling
    let mut rng = stream_rng(seed, Stream::SoftFilter);
    let indices = probs
        .iter()
        .enumerate()
        .filter_map(|(t, &p)| {
            let u: f64 = rng.random();
            (u < p).then_some(t)
        })
        .collect();
    Ok(FairIndexSet { indices, policy: Policy::Soft { sigma2 }, m: preds.m() })
}

/// Runs the third party's filter for `policy`. Under the soft policy the
/// reference hypothesis is the first prediction row with its `s` component
/// removed.
pub fn apply_policy(preds: &PredictionMatrix, s: &[f64], policy: Policy, seed: u64) -> Result<FairIndexSet> {
    match policy {
        Policy::Hard { rho } => hard_filter(preds, s, rho),
        Policy::Soft { sigma2 } => {
            if preds.m() == 0 {
                return Ok(FairIndexSet { indices: Vec::new(), policy, m: 0 });
            }
            let star = reference_hypothesis(&preds.row(0), s)?;
            soft_filter(preds, &star, sigma2, seed, Some(s))
        }
    }
}

/// Removes from `preds_any` its component along the centered `s`, giving a
/// vector with zero empirical covariance with `s`.
pub fn reference_hypothesis(preds_any: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if preds_any.len() != s.len() {
        return Err(DflError::Dimension(format!("{} vs {}", preds_any.len(), s.len())));
    }
    let ms = stats::mean(s);
    let centered: Vec<f64> = s.iter().map(|v| v - ms).collect();
    let ss = stats::sum(centered.iter().map(|v| v * v));
    if ss == 0.0 {
        return Err(DflError::InvalidArgument("sensitive vector is constant".into()));
    }
    let proj = stats::sum(preds_any.iter().zip(&centered).map(|(a, b)| a * b)) / ss;
    Ok(preds_any.iter().zip(&centered).map(|(a, c)| a - proj * c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle_cov(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n
    }

    /// Rows with covariance exactly `covs[t]` against `s = [1,1,0,0]`:
    /// `cov(c·4·(s - 0.5), s) = c`.
    fn rows_with_covs(covs: &[f64]) -> (PredictionMatrix, Vec<f64>) {
        let s = vec![1., 1., 0., 0.];
        let data: Vec<f64> = covs.iter().flat_map(|&c| s.iter().map(move |&v| 4.0 * c * (v - 0.5))).collect();
        (PredictionMatrix::from_row_major(covs.len(), 4, &data).unwrap(), s)
    }

    #[test]
    fn estimate_cov_examples() {
        assert_eq!(estimate_cov(&[1., 1., 0., 0.], &[1., 1., 0., 0.]).unwrap(), 0.25);
        assert_eq!(estimate_cov(&[1., 0., 1., 0.], &[0., 1., 0., 1.]).unwrap(), -0.25);
        assert_eq!(estimate_cov(&[3., 3., 3., 3.], &[0., 1., 0., 1.]).unwrap(), 0.0);
        assert!(estimate_cov(&[1., 2.], &[1.]).is_err());
    }

    #[test]
    fn hard_filter_example() {
        let (p, s) = rows_with_covs(&[0.05, -0.2, 0.1]);
        let set = hard_filter(&p, &s, 0.1).unwrap();
        assert_eq!(set.indices, vec![0, 2]);
        assert_eq!(set.m, 3);
        assert_eq!(hard_filter(&p, &s, 0.2).unwrap().k(), 3);
        assert_eq!(hard_filter(&p, &s, f64::INFINITY).unwrap().k(), 3);
    }

    #[test]
    fn hard_filter_rho_zero_keeps_exact_zero() {
        let (p, s) = rows_with_covs(&[0.3, 0.0, -0.1]);
        let set = hard_filter(&p, &s, 0.0).unwrap();
        assert_eq!(set.indices, vec![1]);
        let none = hard_filter(&rows_with_covs(&[0.3]).0, &s, 0.0).unwrap();
        assert!(matches!(none.require_nonempty(), Err(DflError::NoFairHypotheses { m: 1 })));
    }

    #[test]
    fn hard_filter_matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let m = rng.random_range(1..12);
            let n = rng.random_range(2..15);
            let vals: Vec<f64> = (0..m * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let rho = rng.random_range(0.0..0.5);
            let p = PredictionMatrix::from_row_major(m, n, &vals).unwrap();
            let got = hard_filter(&p, &s, rho).unwrap().indices;
            let want: Vec<usize> =
                (0..m).filter(|&t| oracle_cov(&vals[t * n..(t + 1) * n], &s).abs() <= rho).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn soft_filter_center_always_accepted() {
        let star = vec![0.5, -1.0, 2.0];
        let p = PredictionMatrix::from_row_major(2, 3, &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]).unwrap();
        for seed in 0..50 {
            assert_eq!(soft_filter(&p, &star, 0.01, seed, None).unwrap().indices, vec![0, 1]);
        }
    }

    #[test]
    fn soft_filter_acceptance_rate_matches_rule() {
        // ‖Ŷ - star‖² = 2 σ₂²  =>  p = e^{-1}
        let sigma2 = 0.7f64;
        let star = vec![0.0, 0.0];
        let d = sigma2 * 2f64.sqrt();
        let reps = 10_000;
        let data: Vec<f64> = (0..reps).flat_map(|_| [d, 0.0]).collect();
        let p = PredictionMatrix::from_row_major(reps, 2, &data).unwrap();
        let rate = soft_filter(&p, &star, sigma2, 3, None).unwrap().k() as f64 / reps as f64;
        assert!((rate - (-1f64).exp()).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn soft_filter_huge_sigma_accepts_all() {
        let p = PredictionMatrix::from_row_major(3, 2, &[1., 2., -3., 4., 0.5, 0.1]).unwrap();
        assert_eq!(soft_filter(&p, &[0., 0.], 1e12, 1, None).unwrap().k(), 3);
        assert!(soft_filter(&p, &[0., 0.], 0.0, 1, None).is_err());
    }

    #[test]
    fn soft_filter_rejects_unfair_reference() {
        let p = PredictionMatrix::from_row_major(1, 4, &[0.; 4]).unwrap();
        let s = [1., 1., 0., 0.];
        assert!(soft_filter(&p, &s, 1.0, 0, Some(&s)).is_err());
        let star = reference_hypothesis(&[1., 2., 3., 4.], &s).unwrap();
        assert!(soft_filter(&p, &star, 1.0, 0, Some(&s)).is_ok());
    }

    #[test]
    fn soft_filter_deterministic_per_seed() {
        let vals: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let p = PredictionMatrix::from_row_major(50, 4, &vals).unwrap();
        let a = soft_filter(&p, &[0.; 4], 1.0, 8, None).unwrap();
        assert_eq!(a, soft_filter(&p, &[0.; 4], 1.0, 8, None).unwrap());
    }

    #[test]
    fn reference_hypothesis_examples() {
        let s = [1., 1., 0., 0.];
        // input = s: s - 1 * (s - 0.5) = 0.5 everywhere
        let out = reference_hypothesis(&s, &s).unwrap();
        assert!(out.iter().all(|v| (v - 0.5).abs() < 1e-15));
        let fair = [1., 2., 2., 1.];
        let same = reference_hypothesis(&fair, &s).unwrap();
        assert!(same.iter().zip(&fair).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(reference_hypothesis(&fair, &[1., 1., 1., 1.]).is_err());
    }

    proptest! {
        #[test]
        fn reference_output_has_zero_cov(vals in proptest::collection::vec(-10.0f64..10.0, 6),
                                         bits in proptest::collection::vec(0u8..2, 6)) {
            let mut s: Vec<f64> = bits.iter().map(|&b| b as f64).collect();
            s[0] = 0.0;
            s[1] = 1.0;
            let out = reference_hypothesis(&vals, &s).unwrap();
            prop_assert!(estimate_cov(&out, &s).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn hard_filter_monotone_in_rho(seed in 0u64..500, r1 in 0.0f64..1.0, r2 in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
            let p = PredictionMatrix::from_row_major(5, 8, &vals).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let a = hard_filter(&p, &s, lo).unwrap().indices;
            let b = hard_filter(&p, &s, hi).unwrap().indices;
            prop_assert!(a.iter().all(|t| b.contains(t)));
        }

        #[test]
        fn covariance_scales_with_predictions(c in -5.0f64..5.0, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let row: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: Vec<f64> = (0..10).map(|i| (i % 3 == 0) as u8 as f64).collect();
            let base = estimate_cov(&row, &s).unwrap();
            let scaled: Vec<f64> = row.iter().map(|v| v * c).collect();
            let got = estimate_cov(&scaled, &s).unwrap();
            prop_assert!((got - c * base).abs() <= 1e-12 * (1.0 + (c * base).abs()));
        }
    }

    #[test]
    fn matrix_shape_mismatch_is_error() {
        let p = PredictionMatrix::new(DMatrix::zeros(2, 3)).unwrap();
        assert!(hard_filter(&p, &[0., 1.], 0.1).is_err());
    }
}
