use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::erf;

/// Parametric model of the distribution of a perception error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParametricErrorDist {
    /// Density `∝ exp(-ρ_θ(‖x‖²)/2)` with ρ the Huber loss switching at `‖x‖² = θ²`.
    /// `x` is a whitened residual of dimension 1 or 2.
    HuberDist { theta: f64 },
    /// Three-region density over a scalar error: `theta_fp` on `(-r_max, -alpha)`,
    /// `theta_t` on `[-alpha, alpha]`, `theta_fn` on `(alpha, r_max)`.
    Piecewise {
        theta_fp: f64,
        theta_t: f64,
        theta_fn: f64,
        alpha: f64,
        r_max: f64,
    },
    /// Isotropic Gaussian.
    Gaussian { mean: f64, sigma: f64 },
}

impl ParametricErrorDist {
    pub fn piecewise(theta_fp: f64, theta_t: f64, theta_fn: f64, alpha: f64, r_max: f64) -> Result<Self> {
        let d = ParametricErrorDist::Piecewise {
            theta_fp,
            theta_t,
            theta_fn,
            alpha,
            r_max,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ParametricErrorDist::HuberDist { theta } if theta > 0.0 && theta.is_finite() => Ok(()),
            ParametricErrorDist::HuberDist { .. } => Err(invalid("Huber theta must be positive")),
            ParametricErrorDist::Gaussian { sigma, mean } if sigma > 0.0 && mean.is_finite() => Ok(()),
            ParametricErrorDist::Gaussian { .. } => Err(invalid("Gaussian sigma must be positive")),
            ParametricErrorDist::Piecewise {
                theta_fp,
                theta_t,
                theta_fn,
                alpha,
                r_max,
            } => {
                if !(alpha > 0.0 && r_max > alpha) {
                    return Err(invalid("piecewise support requires 0 < alpha < r_max"));
                }
                if theta_fp < 0.0 || theta_t < 0.0 || theta_fn < 0.0 {
                    return Err(invalid("piecewise densities must be nonnegative"));
                }
                let mass = self.total_mass();
                if (mass - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("piecewise mass {mass} != 1")));
                }
                Ok(())
            }
        }
    }

    /// Closed-form integral of the density over its support.
    pub fn total_mass(&self) -> f64 {
        match *self {
            ParametricErrorDist::Piecewise {
                theta_fp,
                theta_t,
                theta_fn,
                alpha,
                r_max,
            } => theta_fp * (r_max - alpha) + theta_t * 2.0 * alpha + theta_fn * (r_max - alpha),
            _ => 1.0,
        }
    }

    /// Density at `x`. Piecewise and Gaussian take a scalar; HuberDist accepts 1 or 2 dims.
    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        match *self {
            ParametricErrorDist::Piecewise {
                theta_fp,
                theta_t,
                theta_fn,
                alpha,
                r_max,
            } => {
                let x = scalar(x)?;
                if !(x.abs() < r_max) {
                    return Err(Error::OutOfSupport { value: x, r_max });
                }
                Ok(if x < -alpha {
                    theta_fp
                } else if x <= alpha {
                    theta_t
                } else {
                    theta_fn
                })
            }
            ParametricErrorDist::Gaussian { mean, sigma } => {
                let z2: f64 = x.iter().map(|v| ((v - mean) / sigma).powi(2)).sum();
                let norm = (2.0 * PI * sigma * sigma).powf(x.len() as f64 / 2.0);
                Ok((-0.5 * z2).exp() / norm)
            }
            ParametricErrorDist::HuberDist { theta } => {
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let (rho, _) = huber_rho(sq, theta);
                let z = match x.len() {
                    1 => (2.0 * PI).sqrt() * erf(theta / SQRT_2) + 2.0 * (-0.5 * theta * theta).exp() / theta,
                    2 => 2.0 * PI * (1.0 + (-0.5 * theta * theta).exp() / (theta * theta)),
                    n => return Err(invalid(format!("HuberDist supports 1 or 2 dims, got {n}"))),
                };
                Ok((-0.5 * rho).exp() / z)
            }
        }
    }
}

/// Huber loss on a squared norm `x`, switching at `x = θ²`. Returns `(ρ, dρ/dx)`.
pub(crate) fn huber_rho(x: f64, theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if x <= t2 {
        (x, 1.0)
    } else {
        let s = x.sqrt();
        (2.0 * theta * s - t2, theta / s)
    }
}

fn scalar(x: &[f64]) -> Result<f64> {
    match x {
        [v] => Ok(*v),
        _ => Err(Error::DimensionMismatch { expected: 1, got: x.len() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn piecewise_all_true() {
        let alpha = 0.7;
        let d = ParametricErrorDist::piecewise(0.0, 1.0 / (2.0 * alpha), 0.0, alpha, 10.0).unwrap();
        assert!((d.pdf(&[0.0]).unwrap() - 1.0 / (2.0 * alpha)).abs() < 1e-15);
    }

    #[test]
    fn piecewise_fn_region() {
        // p_FP = 0.25, p_T = 0.5, p_FN = 0.25 with alpha = 1, r_max = 10
        let d = ParametricErrorDist::piecewise(0.25 / 9.0, 0.25, 0.25 / 9.0, 1.0, 10.0).unwrap();
        assert!((d.pdf(&[5.0]).unwrap() - 0.027_777_777_777_777_78).abs() < 1e-12);
        assert!((d.pdf(&[-5.0]).unwrap() - 0.25 / 9.0).abs() < 1e-15);
        assert_eq!(d.pdf(&[1.0]).unwrap(), 0.25);
        assert_eq!(d.pdf(&[-1.0]).unwrap(), 0.25);
    }

    #[test]
    fn piecewise_out_of_support() {
        let d = ParametricErrorDist::piecewise(0.0, 0.5, 0.0, 1.0, 10.0).unwrap();
        assert!(matches!(d.pdf(&[10.0]), Err(Error::OutOfSupport { .. })));
        assert!(matches!(d.pdf(&[-12.0]), Err(Error::OutOfSupport { .. })));
    }

    #[test]
    fn piecewise_rejects_bad_mass() {
        assert!(ParametricErrorDist::piecewise(0.1, 0.5, 0.1, 1.0, 10.0).is_err());
    }

    #[test]
    fn standard_normal_peak() {
        let d = ParametricErrorDist::Gaussian { mean: 0.0, sigma: 1.0 };
        assert!((d.pdf(&[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    /// Midpoint-rule integral of the Huber density (oracle for its normalizer).
    fn integrate_huber(theta: f64, dim: usize) -> f64 {
        let d = ParametricErrorDist::HuberDist { theta };
        let n = 400_000;
        let r_max = 60.0 + 40.0 / theta;
        let h = r_max / n as f64;
        (0..n)
            .map(|i| {
                let r = (i as f64 + 0.5) * h;
                let p = if dim == 1 { d.pdf(&[r]).unwrap() } else { d.pdf(&[r, 0.0]).unwrap() };
                let shell = if dim == 1 { 2.0 } else { 2.0 * PI * r };
                p * shell * h
            })
            .sum()
    }

    #[test]
    fn huber_density_integrates_to_one() {
        for theta in [0.5, 1.0, 2.448, 5.0] {
            assert!((integrate_huber(theta, 1) - 1.0).abs() < 1e-6, "1d theta {theta}");
            assert!((integrate_huber(theta, 2) - 1.0).abs() < 1e-6, "2d theta {theta}");
        }
    }

    proptest! {
        #[test]
        fn piecewise_normalization(p_fp in 0.0f64..1.0, p_t in 0.0f64..1.0, p_fn in 0.0f64..1.0, alpha in 0.1f64..2.0) {
            let s = p_fp + p_t + p_fn;
            prop_assume!(s > 1e-6);
            let (p_fp, p_t, p_fn) = (p_fp / s, p_t / s, p_fn / s);
            let r = 10.0;
            let d = ParametricErrorDist::piecewise(p_fp / (r - alpha), p_t / (2.0 * alpha), p_fn / (r - alpha), alpha, r).unwrap();
            prop_assert!((d.total_mass() - 1.0).abs() < 1e-9);
        }
    }
}
