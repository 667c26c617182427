//! Small statistics helpers shared across modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}

/// Upper quantile of the χ² distribution: the value `q` with `P(X ≤ q) = p`.
pub fn chi2_quantile(p: f64, dof: usize) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("dof must be positive")
        .inverse_cdf(p)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Population variance (divides by n).
pub fn pop_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// One-sided Welch t-test of `mean(a) > mean(b)`; returns the p-value.
pub fn welch_greater(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return if mean(a) > mean(b) { 0.0 } else { 1.0 };
    }
    let t = (mean(a) - mean(b)) / se;
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
    1.0 - dist.cdf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_known_values() {
        assert!((chi2_quantile(0.95, 2) - 5.991_464_547_107_979).abs() < 1e-9);
        assert!((chi2_quantile(0.95, 6) - 12.591_587_243_743_977).abs() < 1e-9);
    }

    #[test]
    fn welch_detects_shift() {
        let a: Vec<f64> = (0..100).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let b: Vec<f64> = (0..100).map(|i| (i % 7) as f64 * 0.1).collect();
        assert!(welch_greater(&a, &b) < 1e-6);
        assert!(welch_greater(&b, &a) > 0.99);
    }
}
