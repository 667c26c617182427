use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::residual::{residual_cw, Residual};
use super::{huber_eval, Track};
use crate::domain::{CameraIntrinsics, Pose3};
use crate::error::{invalid, Error, Result};

const MAX_DAMPED_RETRIES: usize = 12;
const LAMBDA_MAX: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub lm_lambda0: f64,
    pub tol_grad: f64,
    pub tol_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            lm_lambda0: 1e-4,
            tol_grad: 1e-9,
            tol_step: 1e-10,
        }
    }
}

/// Full-batch bundle adjustment problem. Poses are camera-to-world; the
/// first pose is held fixed.
#[derive(Clone, Debug)]
pub struct BAProblem {
    pub poses: Vec<Pose3>,
    pub tracks: Vec<Track>,
    pub intr: CameraIntrinsics,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BAResult {
    pub poses: Vec<Pose3>,
    pub points: Vec<Vector3<f64>>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Robustified cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Residuals skipped at the final estimate because the point was behind a camera.
    pub dropped_residuals: usize,
    pub rank_deficient: bool,
}

struct ObsLin {
    /// Index among free poses, `None` for the fixed gauge pose.
    free: Option<usize>,
    hpp: Matrix6<f64>,
    hpl: Matrix6x3<f64>,
    gp: Vector6<f64>,
}

struct TrackLin {
    hll: Matrix3<f64>,
    gl: Vector3<f64>,
    obs: Vec<ObsLin>,
}

fn terms(track: &Track, pose_cw: &[Pose3], point: &Vector3<f64>, intr: &CameraIntrinsics) -> Vec<(usize, f64, f64, Result<Residual>)> {
    let mut out = Vec::with_capacity(track.observations.len() * 2);
    for o in &track.observations {
        let pose = &pose_cw[o.frame];
        out.push((o.frame, o.scale_sigma, o.theta, residual_cw(pose, point, &o.pixel, intr, 0.0)));
        if let Some(pr) = &o.pixel_right {
            out.push((o.frame, o.scale_sigma, o.theta, residual_cw(pose, point, pr, intr, intr.baseline)));
        }
    }
    out
}

fn track_cost(track: &Track, pose_cw: &[Pose3], point: &Vector3<f64>, intr: &CameraIntrinsics) -> (f64, usize) {
    let mut cost = 0.0;
    let mut dropped = 0;
    for (_, s, theta, res) in terms(track, pose_cw, point, intr) {
        match res {
            Ok(r) => cost += huber_eval(r.r.norm_squared() / (s * s), theta).0,
            Err(_) => dropped += 1,
        }
    }
    (cost, dropped)
}

fn total_cost(tracks: &[Track], pose_cw: &[Pose3], points: &[Vector3<f64>], intr: &CameraIntrinsics) -> (f64, usize) {
    let parts: Vec<(f64, usize)> = tracks
        .par_iter()
        .zip(points.par_iter())
        .map(|(t, p)| track_cost(t, pose_cw, p, intr))
        .collect();
    parts.iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
}

fn linearize(track: &Track, pose_cw: &[Pose3], point: &Vector3<f64>, intr: &CameraIntrinsics) -> TrackLin {
    let mut lin = TrackLin {
        hll: Matrix3::zeros(),
        gl: Vector3::zeros(),
        obs: Vec::with_capacity(track.observations.len()),
    };
    for (frame, s, theta, res) in terms(track, pose_cw, point, intr) {
        let Ok(r) = res else {
            continue;
        };
        let w2 = 1.0 / (s * s);
        let (_, w) = huber_eval(r.r.norm_squared() * w2, theta);
        let w = w * w2;
        let jl_t = r.j_point.transpose();
        lin.hll += w * jl_t * r.j_point;
        lin.gl += w * jl_t * r.r;
        let free = frame.checked_sub(1);
        let jp_t = r.j_pose.transpose();
        let (hpp, hpl, gp) = (w * jp_t * r.j_pose, w * jp_t * r.j_point, w * jp_t * r.r);
        match lin.obs.last_mut() {
            Some(last) if last.free == free && free.is_some() => {
                last.hpp += hpp;
                last.hpl += hpl;
                last.gp += gp;
            }
            _ => lin.obs.push(ObsLin { free, hpp, hpl, gp }),
        }
    }
    lin.obs.retain(|o| o.free.is_some());
    lin
}

fn damp3(m: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let mut d = *m;
    for i in 0..3 {
        d[(i, i)] += lambda * m[(i, i)].max(1e-9);
    }
    d
}

struct Step {
    dp: DVector<f64>,
    dl: Vec<Vector3<f64>>,
}

/// Solves the damped normal equations by eliminating the points.
fn solve_step(lins: &[TrackLin], n_free: usize, lambda: f64) -> Option<Step> {
    let dim = 6 * n_free;
    let mut s = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);
    let mut c_inv = Vec::with_capacity(lins.len());
    for lin in lins {
        for o in &lin.obs {
            let a = 6 * o.free.expect("gauge entries removed");
            let mut blk = s.fixed_view_mut::<6, 6>(a, a);
            blk += o.hpp;
            let mut seg = b.fixed_rows_mut::<6>(a);
            seg -= o.gp;
        }
        let ci = damp3(&lin.hll, lambda).try_inverse().unwrap_or_else(Matrix3::zeros);
        let ws: Vec<Matrix6x3<f64>> = lin.obs.iter().map(|o| o.hpl * ci).collect();
        for (i, oi) in lin.obs.iter().enumerate() {
            let a = 6 * oi.free.expect("gauge entries removed");
            let mut seg = b.fixed_rows_mut::<6>(a);
            seg += ws[i] * lin.gl;
            for oj in &lin.obs[i..] {
                let c = 6 * oj.free.expect("gauge entries removed");
                let blk = ws[i] * oj.hpl.transpose();
                let mut v = s.fixed_view_mut::<6, 6>(a, c);
                v -= blk;
                if a != c {
                    let mut v = s.fixed_view_mut::<6, 6>(c, a);
                    v -= blk.transpose();
                }
            }
        }
        c_inv.push(ci);
    }
    for i in 0..dim {
        s[(i, i)] += lambda * s[(i, i)].max(1e-9);
    }
    let chol = s.cholesky()?;
    let dp = chol.solve(&b);
    let dl = lins
        .iter()
        .zip(&c_inv)
        .map(|(lin, ci)| {
            let mut rhs = -lin.gl;
            for o in &lin.obs {
                let a = 6 * o.free.expect("gauge entries removed");
                rhs -= o.hpl.transpose() * dp.fixed_rows::<6>(a);
            }
            ci * rhs
        })
        .collect();
    Some(Step { dp, dl })
}

fn validate(problem: &BAProblem) -> Result<()> {
    if problem.poses.len() < 2 {
        return Err(invalid("bundle adjustment needs at least two poses"));
    }
    for t in &problem.tracks {
        if t.observations.len() < 2 {
            return Err(invalid(format!("track {} has fewer than two observations", t.landmark_id)));
        }
        for o in &t.observations {
            if o.frame >= problem.poses.len() {
                return Err(invalid(format!("observation refers to missing frame {}", o.frame)));
            }
            if !(o.scale_sigma > 0.0) || !(o.theta >= 0.0) {
                return Err(invalid("observation needs scale_sigma > 0 and theta >= 0"));
            }
        }
        if t.observations.windows(2).any(|w| w[1].frame < w[0].frame) {
            return Err(invalid("track observations must be ordered by frame"));
        }
    }
    Ok(())
}

/// Levenberg-Marquardt on the robustified reprojection cost, with weights
/// re-derived from the Huber loss at every linearization.
pub fn ba_solve(problem: &BAProblem) -> Result<BAResult> {
    validate(problem)?;
    let cfg = &problem.solver;
    let intr = &problem.intr;
    let tracks = &problem.tracks;
    let n_free = problem.poses.len() - 1;
    let mut pose_cw: Vec<Pose3> = problem.poses.iter().map(Pose3::inverse).collect();
    let mut points: Vec<Vector3<f64>> = tracks.iter().map(|t| t.point).collect();
    let (mut cost, mut dropped) = total_cost(tracks, &pose_cw, &points, intr);
    if !cost.is_finite() {
        return Err(Error::Singular("initial cost is not finite".into()));
    }
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = cfg.lm_lambda0;
    let mut converged = false;
    let mut rank_deficient = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let lins: Vec<TrackLin> = tracks
            .par_iter()
            .zip(points.par_iter())
            .map(|(t, p)| linearize(t, &pose_cw, p, intr))
            .collect();
        let grad_pose = lins.iter().flat_map(|l| l.obs.iter().map(|o| o.gp.amax())).fold(0.0, f64::max);
        let grad_point = lins.iter().map(|l| l.gl.amax()).fold(0.0, f64::max);
        if grad_pose.max(grad_point) < cfg.tol_grad {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut factorized = false;
        for _ in 0..MAX_DAMPED_RETRIES {
            let Some(step) = solve_step(&lins, n_free, lambda) else {
                lambda *= 10.0;
                continue;
            };
            factorized = true;
            let cand_pose: Vec<Pose3> = pose_cw
                .iter()
                .enumerate()
                .map(|(i, p)| if i == 0 { *p } else { p.retract_left(&step.dp.fixed_rows::<6>(6 * (i - 1)).into_owned()) })
                .collect();
            let cand_pts: Vec<Vector3<f64>> = points.iter().zip(&step.dl).map(|(p, d)| p + d).collect();
            let (new_cost, new_dropped) = total_cost(tracks, &cand_pose, &cand_pts, intr);
            if new_cost.is_finite() && new_cost <= cost {
                let step_norm = (step.dp.norm_squared() + step.dl.iter().map(|d| d.norm_squared()).sum::<f64>()).sqrt();
                let param_norm = (cand_pts.iter().map(|p| p.norm_squared()).sum::<f64>()).sqrt();
                assert!(new_cost <= cost, "accepted step increased the cost");
                pose_cw = cand_pose;
                points = cand_pts;
                dropped = new_dropped;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if step_norm < cfg.tol_step * (param_norm + cfg.tol_step) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
        if !accepted {
            // No damping level yields descent: a numerical minimum, unless no
            // damped system could be factorized at all.
            if factorized {
                converged = true;
            } else {
                rank_deficient = true;
            }
            break;
        }
        if converged {
            break;
        }
    }
    Ok(BAResult {
        poses: pose_cw.iter().map(Pose3::inverse).collect(),
        points,
        initial_cost,
        final_cost: cost,
        cost_history: history,
        iterations,
        converged,
        dropped_residuals: dropped,
        rank_deficient,
    })
}
