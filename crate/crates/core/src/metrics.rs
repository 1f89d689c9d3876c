//! Fairness and accuracy measures for binary classifiers.

use crate::error::{DflError, Result};
use crate::fairfilter::estimate_cov;

/// Column order of [`MetricsReport::csv_row`].
pub const CSV_HEADER: &str = "SP,ND,err,EP,ED,cov_fs";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub sp: f64,
    pub nd: f64,
    pub classifier_error: f64,
    pub error_parity: f64,
    pub error_disparate: f64,
    pub cov_fs: f64,
    /// `(p̂(f=1|s=0), p̂(f=1|s=1))`
    pub group_rates: (f64, f64),
    /// `(êr|s=0, êr|s=1)`
    pub group_errors: (f64, f64),
}

impl MetricsReport {
    pub fn evaluate(pred: &[u8], y: &[f64], s: &[u8], scores: &[f64]) -> Result<Self> {
        let group_rates = group_positive_rates(pred, s)?;
        let group_errors = group_error_rates(pred, y, s)?;
        Ok(Self {
            sp: (group_rates.1 - group_rates.0).abs(),
            nd: ratio_disparity(group_rates.1, group_rates.0),
            classifier_error: classifier_error(pred, y)?,
            error_parity: (group_errors.1 - group_errors.0).abs(),
            error_disparate: ratio_disparity(group_errors.1, group_errors.0),
            cov_fs: cov_fairness(scores, s)?,
            group_rates,
            group_errors,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.sp, self.nd, self.classifier_error, self.error_parity, self.error_disparate, self.cov_fs
        )
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(DflError::Dimension(format!("{a} vs {b} entries")));
    }
    Ok(())
}

fn group_sizes(s: &[u8]) -> Result<(usize, usize)> {
    let n1 = s.iter().filter(|&&v| v == 1).count();
    let n0 = s.len() - n1;
    if n0 == 0 {
        return Err(DflError::EmptyGroup(0));
    }
    if n1 == 0 {
        return Err(DflError::EmptyGroup(1));
    }
    Ok((n0, n1))
}

fn group_positive_rates(pred: &[u8], s: &[u8]) -> Result<(f64, f64)> {
    check_len(pred.len(), s.len())?;
    let (n0, n1) = group_sizes(s)?;
    let pos = |g: u8| pred.iter().zip(s).filter(|(&p, &sv)| sv == g && p == 1).count() as f64;
    Ok((pos(0) / n0 as f64, pos(1) / n1 as f64))
}

fn group_error_rates(pred: &[u8], y: &[f64], s: &[u8]) -> Result<(f64, f64)> {
    check_len(pred.len(), s.len())?;
    check_len(pred.len(), y.len())?;
    let (n0, n1) = group_sizes(s)?;
    let wrong = |g: u8| {
        pred.iter().zip(y).zip(s).filter(|((&p, &yv), &sv)| sv == g && p as f64 != yv).count() as f64
    };
    Ok((wrong(0) / n0 as f64, wrong(1) / n1 as f64))
}

/// `|1 - num/den|`, with `0` when both are zero and `1` when only the
/// denominator is.
fn ratio_disparity(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 { 0.0 } else { 1.0 }
    } else {
        (1.0 - num / den).abs()
    }
}

/// `|p̂(pred=1|s=1) - p̂(pred=1|s=0)|`
pub fn statistical_parity(pred: &[u8], s: &[u8]) -> Result<f64> {
    let (r0, r1) = group_positive_rates(pred, s)?;
    Ok((r1 - r0).abs())
}

/// Normed disparate `|1 - p̂(pred=1|s=1) / p̂(pred=1|s=0)|`.
pub fn normed_disparate(pred: &[u8], s: &[u8]) -> Result<f64> {
    let (r0, r1) = group_positive_rates(pred, s)?;
    Ok(ratio_disparity(r1, r0))
}

pub fn classifier_error(pred: &[u8], y: &[f64]) -> Result<f64> {
    check_len(pred.len(), y.len())?;
    if pred.is_empty() {
        return Err(DflError::InvalidArgument("empty prediction vector".into()));
    }
    Ok(pred.iter().zip(y).filter(|(&p, &yv)| p as f64 != yv).count() as f64 / pred.len() as f64)
}

/// `|er(f|s=1) - er(f|s=0)|`
pub fn error_parity(pred: &[u8], y: &[f64], s: &[u8]) -> Result<f64> {
    let (e0, e1) = group_error_rates(pred, y, s)?;
    Ok((e1 - e0).abs())
}

/// `|er(f|s=1) / er(f|s=0) - 1|`
pub fn error_disparate(pred: &[u8], y: &[f64], s: &[u8]) -> Result<f64> {
    let (e0, e1) = group_error_rates(pred, y, s)?;
    Ok(ratio_disparity(e1, e0))
}

/// Signed `cov(f(x), s)` on raw scores.
pub fn cov_fairness(scores: &[f64], s: &[u8]) -> Result<f64> {
    let sf: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    estimate_cov(scores, &sf)
}
