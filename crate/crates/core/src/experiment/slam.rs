use std::collections::BTreeMap;

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::domain::{layout, CameraIntrinsics, ErrorSample};
use crate::error::{Error, Result};
use crate::gpmap::{build_costmap, gp_fit, CostMap};
use crate::introspect::{normalize_error, train_regressor, LossRecord, RegressionExample, TrainedModel};
use crate::labeler::{collect_dataset, frame_observations};
use crate::rng::mix_seed;
use crate::simworld::{build_world, generate_trajectory, visible_projection, FeatureObservation, Trajectory, TrajectoryConfig, World};
use crate::slam::{mdbf, rpe, run_tracking, sorting_curve, SlamMetricsRow, SortingCurves, ThetaMode};

pub const SLAM_METHODS: [&str; 2] = ["constant", "adaptive"];

/// Per-method aggregate over the successful seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlamAggregate {
    pub method: String,
    pub seeds: usize,
    pub mean_trans_err_pct: f64,
    pub rmse_trans_err_pct: f64,
    pub mean_rot_err_deg_per_m: f64,
    pub rmse_rot_err_deg_per_m: f64,
    pub total_failures: usize,
    pub mean_mdbf_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlamReport {
    pub methods: Vec<String>,
    /// One row per seed and method; failed seeds carry NaN metrics.
    pub rows: Vec<SlamMetricsRow>,
    pub aggregates: Vec<SlamAggregate>,
    pub curves: Vec<(u64, SortingCurves)>,
    pub loss_histories: Vec<(u64, Vec<LossRecord>)>,
    /// Seeds whose pipeline failed, with the error message.
    pub failed: Vec<(u64, String)>,
}

impl SlamReport {
    pub fn row(&self, seed: u64, method: &str) -> Option<&SlamMetricsRow> {
        self.rows.iter().find(|r| r.seed == seed && r.method == method)
    }

    pub fn aggregate(&self, method: &str) -> Option<&SlamAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

/// Training and test sessions of one seed. Both sessions are separate
/// deployments: different worlds drawn from the same configuration and
/// different trajectories.
pub struct SlamSessions {
    pub train_world: World,
    pub train_trajectory: Trajectory,
    pub train_observations: Vec<Vec<FeatureObservation>>,
    pub test_world: World,
    pub test_trajectory: Trajectory,
    pub test_observations: Vec<Vec<FeatureObservation>>,
}

pub fn slam_sessions(cfg: &ExperimentConfig, seed: u64) -> Result<SlamSessions> {
    let intr = &cfg.intrinsics;
    let train_world = build_world(&cfg.world, mix_seed(seed, 1))?;
    let test_world = build_world(&cfg.world, mix_seed(seed, 2))?;
    let preset = cfg.trajectory.preset;
    let train_trajectory = generate_trajectory(&TrajectoryConfig::preset(preset, cfg.trajectory.train_frames), mix_seed(seed, 3))?;
    let test_trajectory = generate_trajectory(&TrajectoryConfig::preset(preset, cfg.trajectory.test_frames), mix_seed(seed, 4))?;
    let train_observations = frame_observations(&train_world, &train_trajectory, intr, &cfg.sensor, mix_seed(seed, 5));
    let test_observations = frame_observations(&test_world, &test_trajectory, intr, &cfg.sensor, mix_seed(seed, 6));
    Ok(SlamSessions {
        train_world,
        train_trajectory,
        train_observations,
        test_world,
        test_trajectory,
        test_observations,
    })
}

fn sample_pixel(s: &ErrorSample, intr: &CameraIntrinsics) -> Vector2<f64> {
    Vector2::new(s.context[layout::U_NORM] * intr.width as f64, s.context[layout::V_NORM] * intr.height as f64)
}

fn frame_targets(samples: &[ErrorSample], cfg: &ExperimentConfig) -> Result<Vec<(Vector2<f64>, f64)>> {
    samples
        .iter()
        .map(|s| Ok((sample_pixel(s, &cfg.intrinsics), normalize_error(s.magnitude, cfg.train.e_max)?)))
        .collect()
}

/// Regression examples from per-frame GP cost-maps: each sample's target is
/// the (clamped) posterior mean of its frame's cost-map at its own pixel and
/// it is masked in when the posterior variance is below the threshold.
pub fn costmap_examples(samples: &[ErrorSample], cfg: &ExperimentConfig) -> Result<Vec<RegressionExample>> {
    let mut by_frame: BTreeMap<u64, Vec<ErrorSample>> = BTreeMap::new();
    for s in samples {
        by_frame.entry(s.frame_id).or_default().push(s.clone());
    }
    let tau = cfg.gp.tau();
    let per_frame: Vec<Result<Vec<RegressionExample>>> = by_frame
        .into_par_iter()
        .map(|(_, frame)| {
            let pts = frame_targets(&frame, cfg)?;
            let gp = gp_fit(&pts, cfg.gp.kernel)?;
            Ok(frame
                .into_iter()
                .zip(pts)
                .map(|(s, (px, _))| {
                    let (mean, var) = gp.predict(&px);
                    RegressionExample { context: s.context, target: mean.clamp(0.0, 1.0), masked_in: var < tau }
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for r in per_frame {
        out.extend(r?);
    }
    Ok(out)
}

/// Dense cost-map of the samples labeled in one frame.
pub fn frame_costmap(samples: &[ErrorSample], frame_id: u64, cfg: &ExperimentConfig) -> Result<CostMap> {
    let frame: Vec<ErrorSample> = samples.iter().filter(|s| s.frame_id == frame_id).cloned().collect();
    let pts = frame_targets(&frame, cfg)?;
    build_costmap(&pts, &cfg.intrinsics, cfg.gp.kernel, cfg.gp.stride, cfg.gp.tau())
}

/// Labels the training session and fits the regressor on its cost-maps.
pub fn train_slam_introspector(cfg: &ExperimentConfig, sessions: &SlamSessions, seed: u64) -> Result<(Vec<ErrorSample>, TrainedModel)> {
    let data = collect_dataset(
        &sessions.train_world,
        &sessions.train_trajectory,
        &cfg.intrinsics,
        &sessions.train_observations,
        &cfg.labeler,
        mix_seed(seed, 7),
    )?;
    let examples = costmap_examples(&data.samples, cfg)?;
    let mut tc = cfg.train.clone();
    tc.seed = mix_seed(seed, 8);
    let model = train_regressor(&examples, &tc)?;
    Ok((data.samples, model))
}

/// `(predicted cost, true reprojection error magnitude)` for every test observation.
pub fn scored_features(model: &TrainedModel, sessions: &SlamSessions, intr: &CameraIntrinsics) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (i, frame) in sessions.test_observations.iter().enumerate() {
        let pose = sessions.test_trajectory.pose(i);
        for o in frame {
            let lm = &sessions.test_world.landmarks[o.landmark_id].position;
            let Some((_, exact, _)) = visible_projection(intr, pose, lm, f64::INFINITY) else {
                continue;
            };
            out.push((model.model.cost(&o.context)?, (o.pixel - exact).norm()));
        }
    }
    Ok(out)
}

struct SeedOutcome {
    rows: Vec<SlamMetricsRow>,
    curves: SortingCurves,
    history: Vec<LossRecord>,
}

fn run_seed(cfg: &ExperimentConfig, methods: &[String], seed: u64) -> Result<SeedOutcome> {
    let sessions = slam_sessions(cfg, seed)?;
    let (_, model) = train_slam_introspector(cfg, &sessions, seed)?;
    let mut rows = Vec::new();
    for m in methods {
        let mode = match m.as_str() {
            "constant" => ThetaMode::Constant,
            _ => ThetaMode::Introspective(&model.model),
        };
        let run = run_tracking(
            &sessions.test_observations,
            &sessions.test_trajectory,
            &cfg.intrinsics,
            &mode,
            cfg.train.theta_max,
            &cfg.tracking,
            mix_seed(seed, 9),
        )?;
        let r = rpe(&run.estimate, &sessions.test_trajectory, cfg.rpe_distance_m)?;
        let d = mdbf(&run.failures, &sessions.test_trajectory);
        rows.push(SlamMetricsRow {
            seed,
            method: m.clone(),
            trans_err_pct: r.trans_err_pct,
            rot_err_deg_per_m: r.rot_err_deg_per_m,
            failures: run.failures.len(),
            mdbf_m: d.meters,
        });
    }
    let scored = scored_features(&model, &sessions, &cfg.intrinsics)?;
    let curves = sorting_curve(&scored, cfg.sorting_trials, mix_seed(seed, 10))?;
    Ok(SeedOutcome { rows, curves, history: model.history })
}

pub(crate) fn select_methods(requested: &[String], known: &[&str]) -> Result<Vec<String>> {
    if requested.is_empty() {
        return Ok(known.iter().map(|s| s.to_string()).collect());
    }
    for m in requested {
        if !known.contains(&m.as_str()) {
            return Err(Error::Config(format!("unknown method '{m}' (expected one of {})", known.join(", "))));
        }
    }
    Ok(known.iter().filter(|k| requested.iter().any(|r| r == *k)).map(|s| s.to_string()).collect())
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// For each seed: build the sessions, label the training session, fit the
/// cost-maps and the regressor, then track the test session with constant
/// and introspective Huber parameters. A failing seed is reported and the
/// remaining seeds continue.
pub fn run_slam_experiment(cfg: &ExperimentConfig) -> Result<SlamReport> {
    cfg.validate()?;
    let methods = select_methods(&cfg.methods, &SLAM_METHODS)?;
    let outcomes: Vec<(u64, Result<SeedOutcome>)> = cfg.seeds.par_iter().map(|&s| (s, run_seed(cfg, &methods, s))).collect();

    let mut report = SlamReport {
        methods: methods.clone(),
        rows: Vec::new(),
        aggregates: Vec::new(),
        curves: Vec::new(),
        loss_histories: Vec::new(),
        failed: Vec::new(),
    };
    for (seed, out) in outcomes {
        match out {
            Ok(o) => {
                report.rows.extend(o.rows);
                report.curves.push((seed, o.curves));
                report.loss_histories.push((seed, o.history));
            }
            Err(e) => {
                report.failed.push((seed, e.to_string()));
                report.rows.extend(methods.iter().map(|m| SlamMetricsRow {
                    seed,
                    method: m.clone(),
                    trans_err_pct: f64::NAN,
                    rot_err_deg_per_m: f64::NAN,
                    failures: 0,
                    mdbf_m: f64::NAN,
                }));
            }
        }
    }
    for m in &methods {
        let ok: Vec<&SlamMetricsRow> = report.rows.iter().filter(|r| &r.method == m && r.trans_err_pct.is_finite()).collect();
        let trans: Vec<f64> = ok.iter().map(|r| r.trans_err_pct).collect();
        let rot: Vec<f64> = ok.iter().map(|r| r.rot_err_deg_per_m).collect();
        let md: Vec<f64> = ok.iter().map(|r| r.mdbf_m).collect();
        report.aggregates.push(SlamAggregate {
            method: m.clone(),
            seeds: ok.len(),
            mean_trans_err_pct: mean(&trans),
            rmse_trans_err_pct: rms(&trans),
            mean_rot_err_deg_per_m: mean(&rot),
            rmse_rot_err_deg_per_m: rms(&rot),
            total_failures: ok.iter().map(|r| r.failures).sum(),
            mean_mdbf_m: mean(&md),
        });
    }
    Ok(report)
}
