//! Moment estimators.
//!
//! All variances and covariances divide by `n` (population convention).
//! Sums use Neumaier compensation.

/// Denominator convention for every covariance in the crate.
pub const POPULATION_CONVENTION: bool = true;

#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = KahanSum::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Population covariance. Panics on unequal lengths; callers validate.
pub fn covariance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    sum(a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb))) / a.len() as f64
}

pub fn variance(a: &[f64]) -> f64 {
    covariance(a, a)
}

/// Sample standard deviation (n - 1), used only for table summaries.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (sum(xs.iter().map(|x| (x - m).powi(2))) / (xs.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    sample_std(xs) / (xs.len() as f64).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = ranks(a);
    let rb = ranks(b);
    let denom = (variance(&ra) * variance(&rb)).sqrt();
    if denom == 0.0 {
        return 0.0;
    }
    covariance(&ra, &rb) / denom
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = r;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_hand_values() {
        assert!((covariance(&[1., 1., 0., 0.], &[1., 1., 0., 0.]) - 0.25).abs() < 1e-15);
        assert!((covariance(&[1., 0., 1., 0.], &[0., 1., 0., 1.]) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum(xs), 2.0);
    }

    #[test]
    fn spearman_perfect_and_reversed() {
        let a = [1., 2., 3., 4.];
        assert!((spearman(&a, &[10., 20., 30., 40.]) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4., 3., 2., 1.]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        assert!((sample_std(&[1., 2., 3.]) - 1.0).abs() < 1e-15);
    }
}
