//! Gaussian-process interpolation of sparse error samples into dense,
//! uncertainty-masked cost-maps.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Vector2};
use serde::{Deserialize, Serialize};

use crate::domain::CameraIntrinsics;
use crate::error::{invalid, Error, Result};

/// Squared-exponential kernel `σ_f² exp(-‖a-b‖² / 2ℓ²)` with noise `σ_n²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub variance: f64,
    pub lengthscale: f64,
    pub noise: f64,
}

impl Default for SeKernel {
    fn default() -> Self {
        Self {
            variance: 0.25,
            lengthscale: 40.0,
            noise: 0.01,
        }
    }
}

impl SeKernel {
    pub fn eval(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
        self.variance * (-(a - b).norm_squared() / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.lengthscale > 0.0 && self.noise >= 0.0) {
            return Err(invalid("kernel parameters must be positive"));
        }
        Ok(())
    }

    /// Default variance threshold for the uncertainty mask.
    pub fn default_tau(&self) -> f64 {
        0.5 * self.variance
    }
}

/// Exact GP posterior over image coordinates.
#[derive(Clone, Debug)]
pub struct GPModel {
    pub train_inputs: Vec<Vector2<f64>>,
    pub train_targets: Vec<f64>,
    pub kernel: SeKernel,
    /// Prior mean (mean of the targets).
    pub prior_mean: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

pub fn gp_fit(samples: &[(Vector2<f64>, f64)], kernel: SeKernel) -> Result<GPModel> {
    kernel.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("GP training set".into()));
    }
    let n = samples.len();
    let inputs: Vec<Vector2<f64>> = samples.iter().map(|s| s.0).collect();
    let targets: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let prior_mean = targets.iter().sum::<f64>() / n as f64;
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel.eval(&inputs[i], &inputs[j]) + if i == j { kernel.noise } else { 0.0 }
    });
    let chol = k
        .cholesky()
        .ok_or_else(|| Error::Singular("kernel matrix is not positive definite".into()))?;
    let y = DVector::from_iterator(n, targets.iter().map(|t| t - prior_mean));
    let alpha = chol.solve(&y);
    Ok(GPModel {
        train_inputs: inputs,
        train_targets: targets,
        kernel,
        prior_mean,
        chol,
        alpha,
    })
}

impl GPModel {
    /// Posterior mean and (latent) variance at `query`.
    pub fn predict(&self, query: &Vector2<f64>) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.train_inputs.len(),
            self.train_inputs.iter().map(|x| self.kernel.eval(x, query)),
        );
        let mean = self.prior_mean + ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular factor is invertible");
        let var = (self.kernel.variance - v.norm_squared()).max(0.0);
        (mean, var)
    }
}

pub fn gp_predict(model: &GPModel, query: &Vector2<f64>) -> (f64, f64) {
    model.predict(query)
}

/// Dense per-pixel cost in `[0, 1]` with a mask of confident pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMap {
    pub width: usize,
    pub height: usize,
    pub grid: Vec<f64>,
    pub mask: Vec<bool>,
}

impl CostMap {
    pub fn get(&self, u: usize, v: usize) -> (f64, bool) {
        let i = v * self.width + u;
        (self.grid[i], self.mask[i])
    }

    /// Value at the pixel nearest to `px`; `None` outside the image.
    pub fn sample(&self, px: &Vector2<f64>) -> Option<(f64, bool)> {
        let (u, v) = (px.x.round(), px.y.round());
        (u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height)
            .then(|| self.get(u as usize, v as usize))
    }

    pub fn write_grid_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.grid.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_mask_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.mask.chunks(self.width) {
            let line: Vec<&str> = row.iter().map(|m| if *m { "1" } else { "0" }).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Evaluates the GP on a `stride`-spaced lattice, fills every pixel from its
/// nearest lattice node, clamps to `[0, 1]` and masks pixels whose posterior
/// variance is below `tau_var`.
pub fn build_costmap(
    samples: &[(Vector2<f64>, f64)],
    intr: &CameraIntrinsics,
    kernel: SeKernel,
    stride: usize,
    tau_var: f64,
) -> Result<CostMap> {
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    let (w, h) = (intr.width, intr.height);
    if samples.is_empty() {
        return Ok(CostMap {
            width: w,
            height: h,
            grid: vec![0.0; w * h],
            mask: vec![false; w * h],
        });
    }
    let gp = gp_fit(samples, kernel)?;
    let (lw, lh) = ((w - 1) / stride + 1, (h - 1) / stride + 1);
    let mut lattice = Vec::with_capacity(lw * lh);
    for j in 0..lh {
        for i in 0..lw {
            lattice.push(gp.predict(&Vector2::new((i * stride) as f64, (j * stride) as f64)));
        }
    }
    let nearest = |p: usize, n: usize| ((p + stride / 2) / stride).min(n - 1);
    let mut grid = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let (m, var) = lattice[nearest(v, lh) * lw + nearest(u, lw)];
            grid.push(m.clamp(0.0, 1.0));
            mask.push(var < tau_var);
        }
    }
    Ok(CostMap {
        width: w,
        height: h,
        grid,
        mask,
    })
}
