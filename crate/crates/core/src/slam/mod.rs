//! Stereo bundle adjustment with per-observation robust losses, a tracking
//! front-end analogue with failure detection, and trajectory metrics.

mod io;
mod metrics;
mod residual;
mod solver;

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3, Vector6};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use io::{read_slam_metrics_csv, read_tum, write_slam_metrics_csv, write_tum, SlamMetricsRow};
pub use metrics::{mdbf, rpe, sorting_curve, Mdbf, RpeResult, SortingCurves};
pub use residual::{reprojection_residual, reprojection_residual_right, Residual};
pub use solver::{ba_solve, BAProblem, BAResult, SolverConfig};

use crate::domain::{huber_rho, CameraIntrinsics, ContextFeatures, Pose3};
use crate::error::{invalid, Result};
use crate::introspect::{theta_from_cost, IntrospectionModel};
use crate::rng::{mix_seed, stream_rng};
use crate::simworld::{FeatureObservation, StampedPose, Trajectory};
use crate::stats::chi2_quantile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub pixel: Vector2<f64>,
    pub pixel_right: Option<Vector2<f64>>,
    pub scale_sigma: f64,
    pub context: ContextFeatures,
    /// Huber parameter of this observation's residuals.
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub landmark_id: usize,
    pub point: Vector3<f64>,
    pub observations: Vec<Observation>,
}

/// Huber loss of a squared weighted residual norm `x`: `(ρ(x), dρ/dx)`.
/// With `θ = 0` the loss is fully saturated (zero for every `x > 0`).
pub fn huber_eval(x: f64, theta: f64) -> (f64, f64) {
    huber_rho(x, theta)
}

pub enum ThetaMode<'a> {
    /// Every observation gets `θ_max / 3`.
    Constant,
    /// `θ` from the introspection model's predicted cost.
    Introspective(&'a IntrospectionModel),
}

impl ThetaMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            ThetaMode::Constant => "constant",
            ThetaMode::Introspective(_) => "adaptive",
        }
    }
}

pub fn constant_theta(theta_max: f64) -> f64 {
    theta_max / 3.0
}

pub fn assign_thetas(tracks: &mut [Track], mode: &ThetaMode, theta_max: f64) -> Result<()> {
    if let ThetaMode::Introspective(m) = mode {
        if !matches!(m, IntrospectionModel::Regressor(_)) {
            return Err(invalid("adaptive thetas need a regressor introspection model"));
        }
    }
    for t in tracks.iter_mut() {
        for o in t.observations.iter_mut() {
            o.theta = match mode {
                ThetaMode::Constant => constant_theta(theta_max),
                ThetaMode::Introspective(m) => theta_from_cost(m.cost(&o.context)?.clamp(0.0, 1.0), theta_max)?,
            };
        }
    }
    Ok(())
}

/// Smallest stereo disparity (px) accepted for triangulation.
const MIN_DISPARITY: f64 = 0.5;

fn triangulate(o: &FeatureObservation, pose: &Pose3, intr: &CameraIntrinsics) -> Option<Vector3<f64>> {
    let depth = intr.depth_from_disparity(o.pixel.x - o.pixel_right.x).filter(|_| o.pixel.x - o.pixel_right.x > MIN_DISPARITY)?;
    Some(pose.transform_point(&intr.unproject(&o.pixel, depth).ok()?))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Groups per-frame observations into tracks (landmarks seen at least
/// twice), initializing each point at the component-wise median of its
/// per-frame stereo triangulations under `init_poses`.
pub fn build_tracks(frames: &[Vec<FeatureObservation>], init_poses: &[Pose3], intr: &CameraIntrinsics) -> Result<Vec<Track>> {
    if frames.len() != init_poses.len() {
        return Err(invalid("one initial pose per frame is required"));
    }
    let mut grouped: BTreeMap<usize, Vec<(usize, &FeatureObservation)>> = BTreeMap::new();
    for (f, obs) in frames.iter().enumerate() {
        for o in obs {
            grouped.entry(o.landmark_id).or_default().push((f, o));
        }
    }
    let mut tracks = Vec::new();
    for (id, obs) in grouped {
        if obs.len() < 2 {
            continue;
        }
        let tri: Vec<Vector3<f64>> = obs.iter().filter_map(|(f, o)| triangulate(o, &init_poses[*f], intr)).collect();
        if tri.is_empty() {
            continue;
        }
        let point = Vector3::from_fn(|i, _| median(&mut tri.iter().map(|p| p[i]).collect::<Vec<_>>()));
        tracks.push(Track {
            landmark_id: id,
            point,
            observations: obs
                .iter()
                .map(|(f, o)| Observation {
                    frame: *f,
                    pixel: o.pixel,
                    pixel_right: Some(o.pixel_right),
                    scale_sigma: o.scale_sigma,
                    context: o.context.clone(),
                    theta: 0.0,
                })
                .collect(),
        });
    }
    Ok(tracks)
}

/// Number of observations per frame whose left residual is an inlier
/// (squared weighted norm at most `inlier_chi2`).
pub fn frame_inliers(
    tracks: &[Track],
    poses: &[Pose3],
    points: &[Vector3<f64>],
    intr: &CameraIntrinsics,
    inlier_chi2: f64,
) -> Vec<usize> {
    let mut counts = vec![0; poses.len()];
    for (t, p) in tracks.iter().zip(points) {
        for o in &t.observations {
            if let Ok(r) = reprojection_residual(&poses[o.frame], p, &o.pixel, intr) {
                if r.r.norm_squared() / (o.scale_sigma * o.scale_sigma) <= inlier_chi2 {
                    counts[o.frame] += 1;
                }
            }
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    /// Minimum inlier observations for a frame to count as tracked.
    pub n_min: usize,
    /// Squared-residual inlier gate.
    pub inlier_chi2: f64,
    /// Initial pose perturbation (metres, degrees).
    pub init_sigma_t: f64,
    pub init_sigma_r_deg: f64,
    pub solver: SolverConfig,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            n_min: 15,
            inlier_chi2: chi2_quantile(0.95, 2),
            init_sigma_t: 0.05,
            init_sigma_r_deg: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingRun {
    pub estimate: Trajectory,
    /// Frame indices at which tracking failed.
    pub failures: Vec<usize>,
    pub inliers: Vec<usize>,
    pub solves: usize,
}

fn perturbed(pose: &Pose3, cfg: &TrackingConfig, rng: &mut impl rand::Rng) -> Pose3 {
    let nt = Normal::new(0.0, cfg.init_sigma_t.max(0.0)).expect("finite sigma");
    let nr = Normal::new(0.0, cfg.init_sigma_r_deg.max(0.0).to_radians()).expect("finite sigma");
    let d = Vector6::new(nt.sample(rng), nt.sample(rng), nt.sample(rng), nr.sample(rng), nr.sample(rng), nr.sample(rng));
    Pose3::exp(&d).compose(pose)
}

/// Session-based tracking: bundle-adjusts the remaining frames from the
/// current session start (anchored at the reference pose), finds the first
/// frame with fewer than `n_min` inliers, records a failure there and
/// re-initializes from the reference at the next frame.
pub fn run_tracking(
    frames: &[Vec<FeatureObservation>],
    reference: &Trajectory,
    intr: &CameraIntrinsics,
    mode: &ThetaMode,
    theta_max: f64,
    cfg: &TrackingConfig,
    seed: u64,
) -> Result<TrackingRun> {
    let n = reference.len();
    if frames.len() != n {
        return Err(invalid("one observation set per reference frame is required"));
    }
    let mut estimate: Vec<Pose3> = Vec::with_capacity(n);
    let mut inliers = vec![0; n];
    let mut failures = Vec::new();
    let mut solves = 0;
    let mut start = 0;
    while start < n {
        if start + 1 == n {
            estimate.push(*reference.pose(start));
            break;
        }
        let mut rng = stream_rng(mix_seed(seed, start as u64), 0x696e6974);
        let init: Vec<Pose3> = (start..n)
            .map(|i| if i == start { *reference.pose(i) } else { perturbed(reference.pose(i), cfg, &mut rng) })
            .collect();
        let mut tracks = build_tracks(&frames[start..], &init, intr)?;
        assign_thetas(&mut tracks, mode, theta_max)?;
        let res = ba_solve(&BAProblem { poses: init, tracks: tracks.clone(), intr: *intr, solver: cfg.solver.clone() })?;
        solves += 1;
        let counts = frame_inliers(&tracks, &res.poses, &res.points, intr, cfg.inlier_chi2);
        let fail = (1..counts.len()).find(|&k| counts[k] < cfg.n_min);
        let keep = fail.map_or(counts.len(), |k| k + 1);
        estimate.extend_from_slice(&res.poses[..keep]);
        inliers[start..start + keep].copy_from_slice(&counts[..keep]);
        match fail {
            Some(k) => {
                failures.push(start + k);
                start += k + 1;
            }
            None => break,
        }
    }
    // Estimates may jump at a failure, so the step-size check applied to
    // ground-truth trajectories is not used here.
    let estimate = Trajectory {
        poses: reference.poses.iter().zip(estimate).map(|(r, pose)| StampedPose { frame: r.frame, pose }).collect(),
        frame_rate: reference.frame_rate,
    };
    Ok(TrackingRun { estimate, failures, inliers, solves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{
        build_world, generate_trajectory, observe_features, NoiseProfile, SensorConfig, TrajectoryConfig,
        TrajectoryPreset, WorldConfig,
    };
    use proptest::prelude::*;

    #[test]
    fn huber_examples() {
        assert_eq!(huber_eval(0.5, 1.0).0, 0.5);
        assert_eq!(huber_eval(4.0, 1.0).0, 3.0);
        let (a, da) = huber_eval(4.0, 2.0);
        let t2 = 4.0f64;
        let (b, db) = (2.0 * 2.0 * t2.sqrt() - t2, 2.0 / t2.sqrt());
        assert!((a - b).abs() < 1e-9 && (da - db).abs() < 1e-9);
        assert_eq!(huber_eval(3.0, 0.0), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn huber_continuous_at_switch(theta in 0.01f64..50.0) {
            let x = theta * theta;
            let (l, dl) = (x, 1.0);
            let (r, dr) = (2.0 * theta * x.sqrt() - theta * theta, theta / x.sqrt());
            prop_assert!((l - r).abs() <= 1e-9 * x.max(1.0));
            prop_assert!((dl - dr).abs() <= 1e-9);
            let (v, d) = huber_eval(x * (1.0 + 1e-12), theta);
            prop_assert!((v - x).abs() <= 1e-9 * x.max(1.0) && (d - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn outlier_influence_shrinks_with_theta(x in 1.0f64..100.0, t1 in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let t2 = t1 * frac;
            prop_assume!(t1 - t2 > 1e-9);
            prop_assert!(huber_eval(x, t2).1 < huber_eval(x, t1).1);
        }
    }

    fn small_scene(seed: u64, n_frames: usize, noise: NoiseProfile) -> (Trajectory, Vec<Vec<FeatureObservation>>, CameraIntrinsics) {
        let intr = CameraIntrinsics::default();
        let world = build_world(&WorldConfig { n_landmarks: 1500, ..Default::default() }, seed).unwrap();
        let traj = generate_trajectory(&TrajectoryConfig::preset(TrajectoryPreset::Gentle, n_frames), seed).unwrap();
        let sensor = SensorConfig { noise, ..Default::default() };
        let frames = traj
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| observe_features(&world, &p.pose, &intr, &sensor, mix_seed(seed, i as u64)))
            .collect();
        (traj, frames, intr)
    }

    fn gt_problem(traj: &Trajectory, frames: &[Vec<FeatureObservation>], intr: &CameraIntrinsics) -> (Vec<Pose3>, Vec<Track>) {
        let poses: Vec<Pose3> = traj.poses.iter().map(|p| p.pose).collect();
        let mut tracks = build_tracks(frames, &poses, intr).unwrap();
        assign_thetas(&mut tracks, &ThetaMode::Constant, 5.99).unwrap();
        (poses, tracks)
    }

    #[test]
    fn noise_free_fixed_point() {
        let (traj, frames, intr) = small_scene(1, 8, NoiseProfile::zero());
        let (poses, tracks) = gt_problem(&traj, &frames, &intr);
        let res = ba_solve(&BAProblem { poses: poses.clone(), tracks, intr, solver: SolverConfig::default() }).unwrap();
        assert!(res.final_cost < 1e-12);
        for (a, b) in res.poses.iter().zip(&poses) {
            let (dt, dr) = a.distance(b);
            assert!(dt < 1e-9 && dr < 1e-9);
        }
    }

    #[test]
    fn noise_free_recovery_from_perturbation() {
        let (traj, frames, intr) = small_scene(2, 10, NoiseProfile::zero());
        let (gt, mut tracks) = gt_problem(&traj, &frames, &intr);
        let mut rng = stream_rng(4, 0);
        let init: Vec<Pose3> = gt
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i == 0 {
                    return *p;
                }
                let d = Vector6::new(0.05, -0.03, 0.04, 0.01, -0.017, 0.012);
                perturbed(&Pose3::exp(&d).compose(p), &TrackingConfig::default(), &mut rng)
            })
            .collect();
        for t in tracks.iter_mut() {
            t.point += Vector3::new(0.05, -0.05, 0.1);
        }
        let res = ba_solve(&BAProblem {
            poses: init,
            tracks,
            intr,
            solver: SolverConfig { max_iters: 50, ..Default::default() },
        })
        .unwrap();
        for (a, b) in res.poses.iter().zip(&gt) {
            let (dt, dr) = a.distance(b);
            assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
        }
        assert!(res.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.converged);
    }

    #[test]
    fn rejects_invalid_problems() {
        let intr = CameraIntrinsics::default();
        let p = BAProblem { poses: vec![Pose3::identity()], tracks: vec![], intr, solver: SolverConfig::default() };
        assert!(ba_solve(&p).is_err());
    }

    #[test]
    fn assign_theta_modes() {
        let (traj, frames, intr) = small_scene(3, 4, NoiseProfile::zero());
        let (_, mut tracks) = gt_problem(&traj, &frames, &intr);
        assert!(tracks.iter().flat_map(|t| &t.observations).all(|o| (o.theta - 5.99 / 3.0).abs() < 1e-15));
        let zero = IntrospectionModel::Binned(crate::introspect::BinnedModel { bins: vec![vec![0.0]; 4] });
        assert!(assign_thetas(&mut tracks, &ThetaMode::Introspective(&zero), 5.99).is_err());
    }

    #[test]
    fn clean_tracking_has_no_failures() {
        let (traj, frames, intr) = small_scene(5, 20, NoiseProfile::zero());
        let run = run_tracking(&frames, &traj, &intr, &ThetaMode::Constant, 5.99, &TrackingConfig::default(), 1).unwrap();
        assert!(run.failures.is_empty());
        assert_eq!(run.estimate.len(), traj.len());
        let r = rpe(&run.estimate, &traj, 5.0).unwrap();
        assert!(r.trans_err_pct < 1e-6);
    }
}
