use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::slam::select_methods;
use super::ExperimentConfig;
use crate::baselines::{build_ensemble, calibrate_sigma2, failure_prob, DepthEnsemble, EnsembleKind, EnsembleSpec, MC_DROPOUT_RATE};
use crate::depth::{
    build_depth_frame, failure_metrics, label_with_estimates, DepthFault, DepthFaultProfile, DepthFrame, DepthMetricsRow,
    DepthSceneConfig, LabeledCell,
};
use crate::domain::{CameraIntrinsics, FailureLabel, RegionClass};
use crate::error::{Error, Result};
use crate::introspect::{train_classifier, train_mlp, IntrospectionModel, Mlp, OutputHead, TrainConfig};
use crate::rng::mix_seed;
use crate::simworld::{
    build_world, generate_trajectory, ClassNoise, NoiseProfile, SensorConfig, SupervisoryConfig, TrajectoryConfig, TrajectoryPreset,
    WorldConfig,
};

pub const DEPTH_METHODS: [&str; 6] = ["ipr", "ensemble", "ensemble-uncalib", "mcdropout", "mcdropout-uncalib", "ipr-ensemble"];

/// Environment and stereo faults of one kind of deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthScene {
    pub world: WorldConfig,
    pub noise: NoiseProfile,
    pub faults: DepthFaultProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthSettings {
    /// Training, calibration and in-distribution test sessions.
    pub id_scene: DepthScene,
    pub ood_scene: DepthScene,
    pub max_range_m: f64,
    pub supervisory: SupervisoryConfig,
    /// Failure threshold on the absolute depth error, meters.
    pub alpha: f64,
    pub preset: TrajectoryPreset,
    pub train_frames: usize,
    pub calib_frames: usize,
    pub test_frames: usize,
    /// Members of every ensemble (N).
    pub n_members: usize,
    /// Training of the depth-correction network.
    pub estimator: TrainConfig,
    /// Training of the failure classifier.
    pub introspector: TrainConfig,
}

impl Default for DepthSettings {
    fn default() -> Self {
        let world = WorldConfig {
            n_landmarks: 700,
            region_mix: BTreeMap::from([
                (RegionClass::Clean, 0.6),
                (RegionClass::Reflection, 0.2),
                (RegionClass::TextureHigh, 0.2),
            ]),
            ..Default::default()
        };
        let noise = NoiseProfile::zero()
            .with(RegionClass::Clean, ClassNoise::gaussian(0.05))
            .with(RegionClass::Reflection, ClassNoise::gaussian(0.05))
            .with(RegionClass::TextureHigh, ClassNoise::gaussian(0.05));
        let faults = DepthFaultProfile::default()
            .with(RegionClass::Reflection, DepthFault { bias_rate: 0.5, bias_m: -3.0, ..Default::default() })
            .with(
                RegionClass::TextureHigh,
                DepthFault { gross_rate: 0.08, gross_factor: (8.0, 15.0), ..Default::default() },
            );
        let ood_world = WorldConfig {
            region_mix: BTreeMap::from([
                (RegionClass::Clean, 0.5),
                (RegionClass::Reflection, 0.3),
                (RegionClass::TextureHigh, 0.2),
            ]),
            ..world.clone()
        };
        let ood_noise = noise.clone().with(RegionClass::Clean, ClassNoise::gaussian(0.1));
        let ood_faults = faults
            .clone()
            .with(RegionClass::Clean, DepthFault { bias_rate: 0.2, bias_m: 2.5, ..Default::default() });
        Self {
            id_scene: DepthScene { world, noise, faults },
            ood_scene: DepthScene { world: ood_world, noise: ood_noise, faults: ood_faults },
            max_range_m: 12.0,
            supervisory: SupervisoryConfig::default(),
            alpha: 1.0,
            preset: TrajectoryPreset::Gentle,
            train_frames: 40,
            calib_frames: 20,
            test_frames: 30,
            n_members: 5,
            estimator: TrainConfig { learning_rate: 0.02, epochs: 40, ..Default::default() },
            introspector: TrainConfig { learning_rate: 0.05, epochs: 40, ..Default::default() },
        }
    }
}

impl DepthSettings {
    pub fn validate(&self) -> Result<()> {
        self.id_scene.faults.validate()?;
        self.ood_scene.faults.validate()?;
        self.estimator.validate()?;
        self.introspector.validate()?;
        if !(self.alpha > 0.0 && self.supervisory.r_max > self.alpha) {
            return Err(Error::Config("depth settings need 0 < alpha < r_max".into()));
        }
        if self.n_members == 0 || self.train_frames < 2 || self.calib_frames < 2 || self.test_frames < 2 {
            return Err(Error::Config("depth sessions and ensembles must be nonempty".into()));
        }
        Ok(())
    }

    fn scene_config(&self, scene: &DepthScene) -> DepthSceneConfig {
        DepthSceneConfig {
            sensor: SensorConfig { noise: scene.noise.clone(), max_range_m: self.max_range_m, scale_sigma: 1.0 },
            faults: scene.faults.clone(),
            supervisory: self.supervisory,
        }
    }
}

/// Renders one depth session: a fresh world drawn from `scene` and a
/// trajectory through it.
pub fn depth_session(settings: &DepthSettings, scene: &DepthScene, intr: &CameraIntrinsics, n_frames: usize, seed: u64) -> Result<Vec<DepthFrame>> {
    let world = build_world(&scene.world, mix_seed(seed, 1))?;
    let traj = generate_trajectory(&TrajectoryConfig::preset(settings.preset, n_frames), mix_seed(seed, 2))?;
    let cfg = settings.scene_config(scene);
    (0..traj.len())
        .into_par_iter()
        .map(|i| build_depth_frame(&world, traj.pose(i), intr, &cfg, i as u64, mix_seed(seed, 3 + i as u64)))
        .collect()
}

/// Stereo depth plus a learned per-cell correction.
#[derive(Clone, Debug)]
pub enum DepthEstimator<'a> {
    Single(&'a Mlp),
    Ensemble(&'a DepthEnsemble),
}

impl DepthEstimator<'_> {
    fn correction(&self, x: &[f64]) -> f64 {
        match self {
            DepthEstimator::Single(m) => m.forward(x)[0],
            DepthEstimator::Ensemble(e) => e.moments(x).0,
        }
    }

    /// Labels the estimator's own outputs on every cell of `frames`.
    pub fn label(&self, frames: &[DepthFrame], alpha: f64, r_max: f64) -> Vec<LabeledCell> {
        frames
            .iter()
            .flat_map(|f| {
                let est = f.cells.iter().map(|c| c.estimated.map(|s| s + self.correction(c.context.as_slice())));
                label_with_estimates(f, est, alpha, r_max)
            })
            .collect()
    }
}

/// Regression data for the correction network: inputs are the cell contexts,
/// targets the supervisory depth minus the stereo depth.
fn correction_data(frames: &[DepthFrame]) -> (Vec<Vec<f64>>, Vec<f64>) {
    frames
        .iter()
        .flat_map(|f| &f.cells)
        .filter_map(|c| Some((c.context.as_slice().to_vec(), c.reference? - c.estimated?)))
        .unzip()
}

fn train_correction(cfg: &TrainConfig, dropout: f64) -> impl Fn(&[Vec<f64>], &[f64], u64) -> Result<Mlp> + Sync + '_ {
    move |xs, ts, seed| {
        let targets: Vec<Vec<f64>> = ts.iter().map(|t| vec![*t]).collect();
        let tc = TrainConfig { seed, dropout, ..cfg.clone() };
        Ok(train_mlp(xs, &targets, OutputHead::Linear, &tc)?.0)
    }
}

fn p_failure_ensemble(e: &DepthEnsemble, cells: &[LabeledCell], alpha: f64) -> Vec<f64> {
    cells.iter().map(|c| failure_prob(e.moments(c.context.as_slice()).1.sqrt(), alpha)).collect()
}

fn p_failure_classifiers(models: &[IntrospectionModel], cells: &[LabeledCell]) -> Result<Vec<f64>> {
    cells
        .iter()
        .map(|c| {
            let mut p = 0.0;
            for m in models {
                p += m.p_failure(&c.context)?;
            }
            Ok((p / models.len() as f64).clamp(0.0, 1.0))
        })
        .collect()
}

/// Everything trained for one seed.
pub struct DepthModels {
    pub single: Mlp,
    pub ensemble: DepthEnsemble,
    pub ensemble_uncalib: DepthEnsemble,
    pub dropout: DepthEnsemble,
    pub dropout_uncalib: DepthEnsemble,
    pub introspectors: Vec<IntrospectionModel>,
}

pub fn train_depth_models(settings: &DepthSettings, train: &[DepthFrame], calib: &[DepthFrame], seed: u64) -> Result<DepthModels> {
    let r_max = settings.supervisory.r_max;
    let n = settings.n_members;
    let (xs, ts) = correction_data(train);
    if xs.is_empty() {
        return Err(Error::Empty("no labeled depth cells in the training session".into()));
    }
    let plain = train_correction(&settings.estimator, 0.0);
    let single = plain(&xs, &ts, mix_seed(seed, 11))?;

    let (cx, ct) = correction_data(calib);
    let calibrated = |e: &DepthEnsemble| -> Result<DepthEnsemble> {
        let preds: Vec<Vec<f64>> = cx.iter().map(|x| e.member_means(x)).collect();
        let sigma2 = calibrate_sigma2(&preds, &ct)?;
        Ok(DepthEnsemble { sigma2, ..e.clone() })
    };
    let ensemble_uncalib = build_ensemble(&plain, EnsembleKind::Bootstrap, &EnsembleSpec::uncalibrated(n, mix_seed(seed, 12)), &xs, &ts)?;
    let ensemble = calibrated(&ensemble_uncalib)?;
    let with_dropout = train_correction(&settings.estimator, MC_DROPOUT_RATE);
    let dropout_uncalib = build_ensemble(&with_dropout, EnsembleKind::McDropout, &EnsembleSpec::uncalibrated(n, mix_seed(seed, 13)), &xs, &ts)?;
    let dropout = calibrated(&dropout_uncalib)?;

    let labeled = DepthEstimator::Single(&single).label(train, settings.alpha, r_max);
    let examples: Vec<_> = labeled.iter().map(|c| (c.context.clone(), c.label)).collect();
    let introspectors = (0..n)
        .into_par_iter()
        .map(|i| {
            let tc = TrainConfig { seed: mix_seed(seed, 20 + i as u64), ..settings.introspector.clone() };
            // member 0 is the single introspector and sees the full data set
            let data: Vec<_> = if i == 0 {
                examples.clone()
            } else {
                let mut rng = crate::rng::stream_rng(tc.seed, 0x626f6f74);
                (0..examples.len()).map(|_| examples[rand::Rng::random_range(&mut rng, 0..examples.len())].clone()).collect()
            };
            Ok(train_classifier(&data, &tc)?.model)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DepthModels { single, ensemble, ensemble_uncalib, dropout, dropout_uncalib, introspectors })
}

/// Labels and failure probabilities of `method` on `frames`.
pub fn method_predictions(models: &DepthModels, method: &str, frames: &[DepthFrame], settings: &DepthSettings) -> Result<(Vec<f64>, Vec<FailureLabel>)> {
    let (alpha, r_max) = (settings.alpha, settings.supervisory.r_max);
    let (cells, p) = match method {
        "ipr" | "ipr-ensemble" => {
            let cells = DepthEstimator::Single(&models.single).label(frames, alpha, r_max);
            let used = if method == "ipr" { &models.introspectors[..1] } else { &models.introspectors[..] };
            let p = p_failure_classifiers(used, &cells)?;
            (cells, p)
        }
        _ => {
            let e = match method {
                "ensemble" => &models.ensemble,
                "ensemble-uncalib" => &models.ensemble_uncalib,
                "mcdropout" => &models.dropout,
                "mcdropout-uncalib" => &models.dropout_uncalib,
                other => return Err(Error::Config(format!("unknown depth method '{other}'"))),
            };
            let cells = DepthEstimator::Ensemble(e).label(frames, alpha, r_max);
            let p = p_failure_ensemble(e, &cells, alpha);
            (cells, p)
        }
    };
    Ok((p, cells.into_iter().map(|c| c.label).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthAggregate {
    pub split: String,
    pub method: String,
    pub seeds: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub nll: f64,
    pub rmse_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub methods: Vec<String>,
    pub id_rows: Vec<DepthMetricsRow>,
    pub ood_rows: Vec<DepthMetricsRow>,
    pub aggregates: Vec<DepthAggregate>,
    /// Calibrated member variances per seed: (seed, ensemble, mcdropout).
    pub sigma2: Vec<(u64, f64, f64)>,
    pub failed: Vec<(u64, String)>,
}

impl DepthReport {
    pub fn aggregate(&self, split: &str, method: &str) -> Option<&DepthAggregate> {
        self.aggregates.iter().find(|a| a.split == split && a.method == method)
    }
}

struct SeedOutcome {
    id: Vec<DepthMetricsRow>,
    ood: Vec<DepthMetricsRow>,
    sigma2: (f64, f64),
}

/// Test sessions and trained models of one seed.
pub struct DepthSeed {
    pub models: DepthModels,
    pub test_id: Vec<DepthFrame>,
    pub test_ood: Vec<DepthFrame>,
}

/// Renders the four sessions of `seed` and trains every model on them.
pub fn prepare_depth_seed(cfg: &ExperimentConfig, seed: u64) -> Result<DepthSeed> {
    let s = &cfg.depth;
    let intr = &cfg.intrinsics;
    let train = depth_session(s, &s.id_scene, intr, s.train_frames, mix_seed(seed, 1))?;
    let calib = depth_session(s, &s.id_scene, intr, s.calib_frames, mix_seed(seed, 2))?;
    let test_id = depth_session(s, &s.id_scene, intr, s.test_frames, mix_seed(seed, 3))?;
    let test_ood = depth_session(s, &s.ood_scene, intr, s.test_frames, mix_seed(seed, 4))?;
    let models = train_depth_models(s, &train, &calib, seed)?;
    Ok(DepthSeed { models, test_id, test_ood })
}

fn run_seed(cfg: &ExperimentConfig, methods: &[String], seed: u64) -> Result<SeedOutcome> {
    let s = &cfg.depth;
    let DepthSeed { models, test_id, test_ood } = prepare_depth_seed(cfg, seed)?;
    let mut out = SeedOutcome { id: Vec::new(), ood: Vec::new(), sigma2: (models.ensemble.sigma2, models.dropout.sigma2) };
    for m in methods {
        for (frames, rows) in [(&test_id, &mut out.id), (&test_ood, &mut out.ood)] {
            let (p, labels) = method_predictions(&models, m, frames, s)?;
            let fm = failure_metrics(&p, &labels)?;
            rows.push(DepthMetricsRow { seed, method: m.clone(), precision: fm.precision, recall: fm.recall, f1: fm.f1, nll: fm.nll });
        }
    }
    Ok(out)
}

fn nan_row(seed: u64, method: &str) -> DepthMetricsRow {
    DepthMetricsRow { seed, method: method.to_string(), precision: f64::NAN, recall: f64::NAN, f1: f64::NAN, nll: f64::NAN }
}

fn aggregate(split: &str, method: &str, rows: &[DepthMetricsRow]) -> DepthAggregate {
    let ok: Vec<&DepthMetricsRow> = rows.iter().filter(|r| r.method == method && r.nll.is_finite()).collect();
    let n = ok.len().max(1) as f64;
    let mean = |f: fn(&DepthMetricsRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
    DepthAggregate {
        split: split.to_string(),
        method: method.to_string(),
        seeds: ok.len(),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        nll: mean(|r| r.nll),
        rmse_nll: (ok.iter().map(|r| r.nll * r.nll).sum::<f64>() / n).sqrt(),
    }
}

/// For each seed: render training, calibration and test sessions, train the
/// correction network, its ensembles and the failure classifiers, and score
/// every method's failure predictions on the in-distribution and the
/// out-of-distribution test sessions.
pub fn run_depth_experiment(cfg: &ExperimentConfig) -> Result<DepthReport> {
    cfg.validate()?;
    let methods = select_methods(&cfg.methods, &DEPTH_METHODS)?;
    let outcomes: Vec<(u64, Result<SeedOutcome>)> = cfg.seeds.par_iter().map(|&s| (s, run_seed(cfg, &methods, s))).collect();
    let mut report = DepthReport { methods: methods.clone(), id_rows: Vec::new(), ood_rows: Vec::new(), aggregates: Vec::new(), sigma2: Vec::new(), failed: Vec::new() };
    for (seed, out) in outcomes {
        match out {
            Ok(o) => {
                report.id_rows.extend(o.id);
                report.ood_rows.extend(o.ood);
                report.sigma2.push((seed, o.sigma2.0, o.sigma2.1));
            }
            Err(e) => {
                report.failed.push((seed, e.to_string()));
                report.id_rows.extend(methods.iter().map(|m| nan_row(seed, m)));
                report.ood_rows.extend(methods.iter().map(|m| nan_row(seed, m)));
            }
        }
    }
    for (split, rows) in [("id", &report.id_rows), ("ood", &report.ood_rows)] {
        for m in &methods {
            report.aggregates.push(aggregate(split, m, rows));
        }
    }
    Ok(report)
}
