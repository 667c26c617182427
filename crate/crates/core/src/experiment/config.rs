use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::depth::DepthSettings;
use crate::depth::DepthFault;
use crate::domain::{CameraIntrinsics, RegionClass};
use crate::error::{Error, Result};
use crate::gpmap::SeKernel;
use crate::introspect::TrainConfig;
use crate::labeler::CollectConfig;
use crate::simworld::{ClassNoise, NoiseProfile, SensorConfig, TrajectoryPreset, WorldConfig};
use crate::slam::TrackingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySettings {
    pub preset: TrajectoryPreset,
    pub train_frames: usize,
    pub test_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSettings {
    pub kernel: SeKernel,
    /// Lattice spacing of dumped cost-maps, pixels.
    pub stride: usize,
    /// Variance threshold of the cost-map mask; `None` uses half the prior variance.
    pub tau_var: Option<f64>,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self {
            kernel: SeKernel::default(),
            stride: 8,
            tau_var: None,
        }
    }
}

impl GpSettings {
    pub fn tau(&self) -> f64 {
        self.tau_var.unwrap_or_else(|| self.kernel.default_tau())
    }
}

/// Everything an experiment run depends on. Serialized as JSON; any key can
/// be overridden with a dotted path (`tracking.n_min=20`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub sensor: SensorConfig,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: TrajectorySettings,
    pub labeler: CollectConfig,
    pub gp: GpSettings,
    pub train: TrainConfig,
    pub tracking: TrackingConfig,
    pub rpe_distance_m: f64,
    pub sorting_trials: usize,
    pub depth: DepthSettings,
    /// Methods to run; empty selects every method of the experiment.
    #[serde(default)]
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::challenge()
    }
}

impl ExperimentConfig {
    /// Default challenge scene: a sparse clean world crossed by 4 m shadow
    /// slabs that hold 20% of the landmarks and produce coherent outliers.
    pub fn challenge() -> Self {
        let world = WorldConfig {
            n_landmarks: 150,
            region_mix: BTreeMap::from([(RegionClass::Clean, 0.8), (RegionClass::Shadow, 0.2)]),
            patch_length: Some(4.0),
            ..Default::default()
        };
        let noise = NoiseProfile::zero().with(RegionClass::Clean, ClassNoise::gaussian(0.5)).with(
            RegionClass::Shadow,
            ClassNoise {
                sigma_px: 1.0,
                outlier_rate: 0.8,
                outlier_radius: 35.0,
                outlier_coherence: 0.85,
            },
        );
        Self {
            world,
            sensor: SensorConfig {
                noise,
                max_range_m: 20.0,
                scale_sigma: 1.0,
            },
            intrinsics: CameraIntrinsics::default(),
            trajectory: TrajectorySettings {
                preset: TrajectoryPreset::Gentle,
                train_frames: 80,
                test_frames: 80,
            },
            labeler: CollectConfig::default(),
            gp: GpSettings {
                kernel: SeKernel { lengthscale: 20.0, ..Default::default() },
                ..Default::default()
            },
            train: TrainConfig { e_max: 3.0, ..Default::default() },
            tracking: TrackingConfig::default(),
            rpe_distance_m: 5.0,
            sorting_trials: 1000,
            depth: DepthSettings::default(),
            methods: Vec::new(),
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("out"),
        }
    }

    /// Noise-free variant of the challenge scene.
    pub fn trivial() -> Self {
        let mut cfg = Self::challenge();
        cfg.sensor.noise = NoiseProfile::zero();
        cfg.labeler = CollectConfig::noiseless();
        cfg.tracking.init_sigma_t = 0.0;
        cfg.tracking.init_sigma_r_deg = 0.0;
        cfg.seeds = vec![0, 1];
        cfg
    }

    /// Challenge scene whose in-distribution depth failures come from two
    /// predictable sources: reflections read too near, high-texture patches
    /// read too far.
    pub fn two_failure_sources() -> Self {
        let mut cfg = Self::challenge();
        cfg.depth.id_scene.faults = cfg
            .depth
            .id_scene
            .faults
            .with(RegionClass::TextureHigh, DepthFault { bias_rate: 0.5, bias_m: 3.0, ..Default::default() });
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.intrinsics.validate().map_err(cfg_err)?;
        self.sensor.noise.validate().map_err(cfg_err)?;
        self.train.validate()?;
        self.depth.validate().map_err(cfg_err)?;
        if self.trajectory.train_frames < 2 || self.trajectory.test_frames < 2 {
            return Err(Error::Config("train and test sessions need at least two frames".into()));
        }
        if !(self.rpe_distance_m > 0.0) || self.sorting_trials == 0 || self.gp.stride == 0 {
            return Err(Error::Config("rpe distance, sorting trials and gp stride must be positive".into()));
        }
        Ok(())
    }

    /// Applies `key=value` overrides. `key` is a dotted path into the JSON
    /// form; `value` is parsed as JSON and falls back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{item}' is not of the form key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut root, key, value)?;
        }
        let cfg: Self = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        // keys that deserialization silently dropped are unknown
        let back = serde_json::to_value(&cfg)?;
        for item in overrides {
            let key = item.as_ref().split_once('=').map_or("", |(k, _)| k);
            let pointer = format!("/{}", key.replace('.', "/"));
            if back.pointer(&pointer).is_none() {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| Error::Config(format!("'{part}' is not an index in '{key}'")))?;
                let slot = items.get_mut(idx).ok_or_else(|| Error::Config(format!("index {idx} out of range in '{key}'")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::Config(format!("'{key}' descends into a scalar"))),
        };
    }
    Err(Error::Config("empty config key".into()))
}

/// Parses `a..b` (exclusive) or a comma-separated list of seeds.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("invalid seed list '{spec}'"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::challenge();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = ExperimentConfig::challenge();
        let o = cfg.with_overrides(&["tracking.n_min=20", "out_dir=/tmp/x", "seeds=[4,5]"]).unwrap();
        assert_eq!(o.tracking.n_min, 20);
        assert_eq!(o.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(o.seeds, vec![4, 5]);
        assert!(matches!(cfg.with_overrides(&["tracking.nope.x=1"]), Err(Error::Config(_))));
        assert!(matches!(cfg.with_overrides(&["nope=1"]), Err(Error::Config(_))));
        let shadow = cfg.with_overrides(&["depth.id_scene.world.region_mix.Shadow=0.1"]).unwrap();
        assert_eq!(shadow.depth.id_scene.world.region_mix[&RegionClass::Shadow], 0.1);
        assert!(matches!(cfg.with_overrides(&["seeds=[]"]), Err(Error::Config(_))));
        assert!(matches!(cfg.with_overrides(&["novalue"]), Err(Error::Config(_))));
        assert!(matches!(cfg.with_overrides(&["trajectory.preset=Sideways"]), Err(Error::Config(_))));
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("7, 9").unwrap(), vec![7, 9]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
