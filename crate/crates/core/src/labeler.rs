//! Autonomously supervised error labeling.
//!
//! Two consistency constraints turn raw observations into [`ErrorSample`]s:
//! agreement with a higher-fidelity supervisory sensor, and agreement of the
//! current observation with a posterior estimate from `delta_t` frames back,
//! transported through the estimated relative pose. Relative poses are only
//! used after passing a χ² test against an independent pose reference.

use nalgebra::{Matrix2, Matrix6, Vector2, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{compose_error, CameraIntrinsics, ContextFeatures, ErrorSample, Pose3, SampleSource};
use crate::error::{invalid, Error, Result};
use crate::rng::{mix_seed, stream_rng};
use crate::simworld::{observe_features, visible_projection, FeatureObservation, SensorConfig, Trajectory, World};
use crate::stats::chi2_quantile;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrackState {
    pub feature_pixel_posterior: Vector2<f64>,
    pub depth_posterior: f64,
    pub cov: Matrix2<f64>,
}

impl PosteriorTrackState {
    pub fn new(pixel: Vector2<f64>, depth: f64, cov: Matrix2<f64>) -> Result<Self> {
        if !(depth > 0.0) {
            return Err(invalid("posterior depth must be positive"));
        }
        if (cov - cov.transpose()).norm() > 1e-12 || cov.cholesky().is_none() {
            return Err(invalid("posterior covariance must be symmetric positive definite"));
        }
        Ok(Self {
            feature_pixel_posterior: pixel,
            depth_posterior: depth,
            cov,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub alpha_sig: f64,
    pub dof: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { alpha_sig: 0.05, dof: 6 }
    }
}

impl GateConfig {
    pub fn threshold(&self) -> f64 {
        chi2_quantile(1.0 - self.alpha_sig, self.dof)
    }
}

/// Why a candidate label was not produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    /// The supervisory sensor reported no valid value.
    Sentinel,
    /// The transported point fell behind the camera.
    BehindCamera,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LabelOutcome {
    Sample(ErrorSample),
    Skipped(SkipReason),
}

impl LabelOutcome {
    pub fn sample(self) -> Option<ErrorSample> {
        match self {
            LabelOutcome::Sample(s) => Some(s),
            LabelOutcome::Skipped(_) => None,
        }
    }
}

/// Labels `primary ⊖ supervisory`. A supervisory value equal to `sentinel`
/// (e.g. no return from the depth sensor) yields no sample.
pub fn label_cross_sensor(
    primary: &[f64],
    supervisory: &[f64],
    sentinel: Option<f64>,
    context: ContextFeatures,
    frame_id: u64,
) -> Result<LabelOutcome> {
    if let Some(s) = sentinel {
        if supervisory.contains(&s) {
            return Ok(LabelOutcome::Skipped(SkipReason::Sentinel));
        }
    }
    let err = compose_error(primary, supervisory)?;
    Ok(LabelOutcome::Sample(ErrorSample::new(context, err, SampleSource::CrossSensor, frame_id)?))
}

/// Reprojection error of the current observation against a posterior
/// feature estimate from an earlier frame. `relpose_est` maps points from
/// the earlier camera frame into the current camera frame.
pub fn label_spatio_temporal(
    obs_now: &Vector2<f64>,
    posterior: &PosteriorTrackState,
    relpose_est: &Pose3,
    intr: &CameraIntrinsics,
    context: ContextFeatures,
    frame_id: u64,
) -> Result<LabelOutcome> {
    let p_prev = intr.unproject(&posterior.feature_pixel_posterior, posterior.depth_posterior)?;
    let p_now = relpose_est.transform_point(&p_prev);
    let predicted = match intr.project_camera(&p_now) {
        Ok(px) => px,
        Err(Error::BehindCamera { .. }) => return Ok(LabelOutcome::Skipped(SkipReason::BehindCamera)),
        Err(e) => return Err(e),
    };
    let err = compose_error(obs_now.as_slice(), predicted.as_slice())?;
    Ok(LabelOutcome::Sample(ErrorSample::new(context, err, SampleSource::SpatioTemporal, frame_id)?))
}

/// Accepts iff `d² ≤ χ²_{1-α}(dof)`.
pub fn chi2_gate(mahalanobis_sq: f64, cfg: &GateConfig) -> bool {
    mahalanobis_sq <= cfg.threshold()
}

/// Squared Mahalanobis distance between two poses under a diagonal
/// covariance in `[translation; rotation]` tangent coordinates.
pub fn pose_mahalanobis_sq(a: &Pose3, b: &Pose3, cov_diag: &Vector6<f64>) -> f64 {
    let d = a.compose(&b.inverse()).log();
    let info = Matrix6::from_diagonal(&cov_diag.map(|v| 1.0 / v));
    (d.transpose() * info * d)[0]
}

/// Isotropic translation / rotation standard deviations of a pose estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNoise {
    pub sigma_t: f64,
    pub sigma_r: f64,
}

impl PoseNoise {
    pub const ZERO: PoseNoise = PoseNoise { sigma_t: 0.0, sigma_r: 0.0 };

    pub fn cov_diag(&self) -> Vector6<f64> {
        let (t, r) = (self.sigma_t * self.sigma_t, self.sigma_r * self.sigma_r);
        Vector6::new(t, t, t, r, r, r)
    }

    /// Left-perturbs `pose` with a draw from this noise model.
    pub fn perturb<R: Rng>(&self, pose: &Pose3, rng: &mut R) -> Pose3 {
        let mut draw = |s: f64| if s > 0.0 { Normal::new(0.0, s).unwrap().sample(rng) } else { 0.0 };
        let v = Vector6::new(
            draw(self.sigma_t),
            draw(self.sigma_t),
            draw(self.sigma_t),
            draw(self.sigma_r),
            draw(self.sigma_r),
            draw(self.sigma_r),
        );
        Pose3::exp(&v).compose(pose)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    /// Frames between the posterior estimate and the current observation.
    pub delta_t: usize,
    pub gate: GateConfig,
    /// Error of the back-end's relative pose estimate.
    pub pose_est_noise: PoseNoise,
    /// Error of the independent pose reference the estimate is gated against.
    pub pose_sup_noise: PoseNoise,
    /// Posterior feature-position error, pixels.
    pub posterior_sigma_px: f64,
    /// Posterior depth error, meters.
    pub posterior_sigma_depth: f64,
    /// Landmark-position error of the supervisory 3D sensor, meters.
    pub supervisory_sigma_m: f64,
    pub cross_sensor: bool,
    pub spatio_temporal: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            delta_t: 10,
            gate: GateConfig::default(),
            pose_est_noise: PoseNoise { sigma_t: 0.002, sigma_r: 0.0005 },
            pose_sup_noise: PoseNoise { sigma_t: 0.002, sigma_r: 0.0005 },
            posterior_sigma_px: 0.1,
            posterior_sigma_depth: 0.02,
            supervisory_sigma_m: 0.002,
            cross_sensor: true,
            spatio_temporal: true,
        }
    }
}

impl CollectConfig {
    /// Everything noise-free.
    pub fn noiseless() -> Self {
        Self {
            pose_est_noise: PoseNoise::ZERO,
            pose_sup_noise: PoseNoise::ZERO,
            posterior_sigma_px: 0.0,
            posterior_sigma_depth: 0.0,
            supervisory_sigma_m: 0.0,
            ..Default::default()
        }
    }
}

/// Per-frame feature observations, seeded per frame.
pub fn frame_observations(
    world: &World,
    trajectory: &Trajectory,
    intr: &CameraIntrinsics,
    sensor: &SensorConfig,
    seed: u64,
) -> Vec<Vec<FeatureObservation>> {
    (0..trajectory.len())
        .into_par_iter()
        .map(|i| observe_features(world, trajectory.pose(i), intr, sensor, mix_seed(seed, trajectory.poses[i].frame)))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollectStats {
    pub observations: usize,
    pub frames_gated_out: usize,
    pub frames_gated: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ErrorSample>,
    pub stats: CollectStats,
}

fn normal_or_zero<R: Rng>(rng: &mut R, s: f64) -> f64 {
    if s > 0.0 {
        Normal::new(0.0, s).unwrap().sample(rng)
    } else {
        0.0
    }
}

/// Runs both labelers over the per-frame `observations` of a trajectory.
/// Output is frame-sorted and a pure function of the inputs and `seed`.
pub fn collect_dataset(
    world: &World,
    trajectory: &Trajectory,
    intr: &CameraIntrinsics,
    observations: &[Vec<FeatureObservation>],
    cfg: &CollectConfig,
    seed: u64,
) -> Result<Dataset> {
    if trajectory.len() < 2 {
        return Err(invalid("need at least two frames to collect errors"));
    }
    if observations.len() != trajectory.len() {
        return Err(invalid("one observation set per trajectory frame is required"));
    }
    let obs = observations;
    let per_frame: Vec<Result<(Vec<ErrorSample>, CollectStats)>> = (0..trajectory.len())
        .into_par_iter()
        .map(|t| collect_frame(world, trajectory, intr, cfg, seed, t, &obs[t]))
        .collect();
    let mut samples = Vec::new();
    let mut stats = CollectStats::default();
    for r in per_frame {
        let (s, st) = r?;
        samples.extend(s);
        stats.observations += st.observations;
        stats.frames_gated += st.frames_gated;
        stats.frames_gated_out += st.frames_gated_out;
        stats.skipped += st.skipped;
    }
    Ok(Dataset { samples, stats })
}

fn collect_frame(
    world: &World,
    trajectory: &Trajectory,
    intr: &CameraIntrinsics,
    cfg: &CollectConfig,
    seed: u64,
    t: usize,
    observations: &[FeatureObservation],
) -> Result<(Vec<ErrorSample>, CollectStats)> {
    let frame_id = trajectory.poses[t].frame;
    let mut rng = stream_rng(mix_seed(seed, frame_id), 0x1abe1);
    let mut stats = CollectStats { observations: observations.len(), ..Default::default() };
    let mut samples = Vec::new();
    let pose_now = trajectory.pose(t);

    if cfg.cross_sensor {
        let sup_pose = cfg.pose_sup_noise.perturb(pose_now, &mut rng);
        for o in observations {
            let lm = &world.landmarks[o.landmark_id].position;
            let measured = lm
                + Vector3::new(
                    normal_or_zero(&mut rng, cfg.supervisory_sigma_m),
                    normal_or_zero(&mut rng, cfg.supervisory_sigma_m),
                    normal_or_zero(&mut rng, cfg.supervisory_sigma_m),
                );
            match intr.project(&sup_pose, &measured) {
                Ok(reference) => {
                    let out = label_cross_sensor(o.pixel.as_slice(), reference.as_slice(), None, o.context.clone(), frame_id)?;
                    match out.sample() {
                        Some(s) => samples.push(s),
                        None => stats.skipped += 1,
                    }
                }
                Err(_) => stats.skipped += 1,
            }
        }
    }

    if cfg.spatio_temporal && t >= cfg.delta_t && cfg.delta_t > 0 {
        let prev = t - cfg.delta_t;
        let pose_prev = trajectory.pose(prev);
        let rel_gt = pose_now.inverse().compose(pose_prev);
        let rel_est = cfg.pose_est_noise.perturb(&rel_gt, &mut rng);
        let rel_sup = cfg.pose_sup_noise.perturb(&rel_gt, &mut rng);
        let cov = cfg.pose_est_noise.cov_diag() + cfg.pose_sup_noise.cov_diag();
        let accepted = if cov.iter().all(|v| *v > 0.0) {
            chi2_gate(pose_mahalanobis_sq(&rel_est, &rel_sup, &cov), &cfg.gate)
        } else {
            true
        };
        stats.frames_gated += 1;
        if !accepted {
            stats.frames_gated_out += 1;
        } else {
            let cov_px = Matrix2::identity() * cfg.posterior_sigma_px.max(1e-6).powi(2);
            for o in observations {
                let lm = &world.landmarks[o.landmark_id].position;
                let Some((pc, px, _)) = visible_projection(intr, pose_prev, lm, f64::INFINITY) else {
                    stats.skipped += 1;
                    continue;
                };
                let post_px = px
                    + Vector2::new(
                        normal_or_zero(&mut rng, cfg.posterior_sigma_px),
                        normal_or_zero(&mut rng, cfg.posterior_sigma_px),
                    );
                let depth = (pc.z + normal_or_zero(&mut rng, cfg.posterior_sigma_depth)).max(1e-3);
                let posterior = PosteriorTrackState::new(post_px, depth, cov_px)?;
                match label_spatio_temporal(&o.pixel, &posterior, &rel_est, intr, o.context.clone(), frame_id)? {
                    LabelOutcome::Sample(s) => samples.push(s),
                    LabelOutcome::Skipped(_) => stats.skipped += 1,
                }
            }
        }
    }
    Ok((samples, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::RegionClass;
    use crate::simworld::{build_world, generate_trajectory, ClassNoise, NoiseProfile, TrajectoryConfig, WorldConfig};
    use std::collections::BTreeMap;

    fn ctx() -> ContextFeatures {
        ContextFeatures::from_parts(RegionClass::Clean, 0.2, 0.5, 0.5, 0.5, 0.2).unwrap()
    }

    #[test]
    fn cross_sensor_examples() {
        let s = label_cross_sensor(&[4.0], &[4.0], Some(10.0), ctx(), 0).unwrap().sample().unwrap();
        assert_eq!(s.error, vec![0.0]);
        let s = label_cross_sensor(&[3.0], &[5.0], Some(10.0), ctx(), 0).unwrap().sample().unwrap();
        assert_eq!(s.error, vec![-2.0]);
        assert_eq!(s.source, SampleSource::CrossSensor);
        assert_eq!(
            label_cross_sensor(&[3.0], &[10.0], Some(10.0), ctx(), 0).unwrap(),
            LabelOutcome::Skipped(SkipReason::Sentinel)
        );
    }

    #[test]
    fn spatio_temporal_examples() {
        let intr = CameraIntrinsics::default();
        let post = PosteriorTrackState::new(Vector2::new(320.0, 240.0), 5.0, Matrix2::identity() * 0.01).unwrap();
        let s = label_spatio_temporal(&Vector2::new(320.0, 240.0), &post, &Pose3::identity(), &intr, ctx(), 3)
            .unwrap()
            .sample()
            .unwrap();
        assert_eq!(s.error, vec![0.0, 0.0]);
        assert_eq!(s.source, SampleSource::SpatioTemporal);

        // moving 1 m toward an on-axis landmark at 5 m keeps it at the principal point
        let rel = Pose3::from_translation(Vector3::new(0.0, 0.0, -1.0));
        let off = PosteriorTrackState::new(Vector2::new(370.0, 240.0), 5.0, Matrix2::identity()).unwrap();
        // (370-320)*5/500 = 0.5 m right; at 4 m it projects to 320 + 500*0.5/4 = 382.5
        let s = label_spatio_temporal(&Vector2::new(382.5, 240.0), &off, &rel, &intr, ctx(), 3)
            .unwrap()
            .sample()
            .unwrap();
        assert!(s.magnitude < 1e-9);
        let s = label_spatio_temporal(&Vector2::new(322.0, 240.0), &post, &rel, &intr, ctx(), 3)
            .unwrap()
            .sample()
            .unwrap();
        assert!((s.error[0] - 2.0).abs() < 1e-12 && s.error[1].abs() < 1e-12);
        assert!((s.magnitude - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spatio_temporal_behind_camera_skipped() {
        let intr = CameraIntrinsics::default();
        let post = PosteriorTrackState::new(Vector2::new(320.0, 240.0), 5.0, Matrix2::identity()).unwrap();
        let rel = Pose3::from_translation(Vector3::new(0.0, 0.0, -6.0));
        assert_eq!(
            label_spatio_temporal(&Vector2::new(320.0, 240.0), &post, &rel, &intr, ctx(), 0).unwrap(),
            LabelOutcome::Skipped(SkipReason::BehindCamera)
        );
    }

    #[test]
    fn posterior_validation() {
        assert!(PosteriorTrackState::new(Vector2::zeros(), 0.0, Matrix2::identity()).is_err());
        assert!(PosteriorTrackState::new(Vector2::zeros(), 1.0, Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn gate_examples() {
        let cfg = GateConfig::default();
        assert!(chi2_gate(0.0, &cfg));
        assert!(!chi2_gate(100.0, &cfg));
        assert!((cfg.threshold() - 12.592).abs() < 1e-3);
    }

    fn scene(noise: NoiseProfile) -> (World, Trajectory, CollectConfig, Vec<Vec<FeatureObservation>>) {
        let world = build_world(
            &WorldConfig {
                n_landmarks: 800,
                region_mix: BTreeMap::from([(RegionClass::Clean, 0.5), (RegionClass::Shadow, 0.5)]),
                ..Default::default()
            },
            21,
        )
        .unwrap();
        let traj = generate_trajectory(&TrajectoryConfig::preset(crate::simworld::TrajectoryPreset::Gentle, 30), 21).unwrap();
        let sensor = SensorConfig { noise, ..Default::default() };
        let obs = frame_observations(&world, &traj, &CameraIntrinsics::default(), &sensor, 4);
        (world, traj, CollectConfig::default(), obs)
    }

    #[test]
    fn noiseless_world_gives_zero_errors() {
        let (w, t, _, obs) = scene(NoiseProfile::zero());
        let cfg = CollectConfig::noiseless();
        let d = collect_dataset(&w, &t, &CameraIntrinsics::default(), &obs, &cfg, 4).unwrap();
        assert!(!d.samples.is_empty());
        assert!(d.samples.iter().all(|s| s.magnitude < 1e-9));
    }

    #[test]
    fn sample_count_bounded_by_observations() {
        let (w, t, mut cfg, obs) = scene(NoiseProfile::zero());
        cfg.cross_sensor = false;
        let d = collect_dataset(&w, &t, &CameraIntrinsics::default(), &obs, &cfg, 4).unwrap();
        assert!(d.samples.len() <= d.stats.observations);
        assert!(d.samples.windows(2).all(|w| w[0].frame_id <= w[1].frame_id));
    }

    #[test]
    fn shadow_errors_exceed_clean_errors() {
        let noise = NoiseProfile::zero()
            .with(RegionClass::Clean, ClassNoise::gaussian(0.5))
            .with(RegionClass::Shadow, ClassNoise::gaussian(3.0));
        let (w, t, cfg, obs) = scene(noise);
        let d = collect_dataset(&w, &t, &CameraIntrinsics::default(), &obs, &cfg, 4).unwrap();
        let mean_of = |c: RegionClass| {
            let v: Vec<f64> = d.samples.iter().filter(|s| s.context.region() == Some(c)).map(|s| s.magnitude).collect();
            assert!(v.len() >= 1000, "{} samples for {:?}", v.len(), c);
            crate::stats::mean(&v)
        };
        assert!(mean_of(RegionClass::Shadow) > mean_of(RegionClass::Clean));
    }

    #[test]
    fn too_short_trajectory_rejected() {
        let (w, t, cfg, obs) = scene(NoiseProfile::zero());
        let short = Trajectory::new(t.poses[..1].to_vec(), 10.0).unwrap();
        assert!(collect_dataset(&w, &short, &CameraIntrinsics::default(), &obs[..1], &cfg, 0).is_err());
    }
}
