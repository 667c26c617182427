use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::RegionClass;
use crate::error::{invalid, Result};
use crate::rng::stream_rng;

/// Axis-aligned box that landmarks are drawn from, minus a clear corridor
/// `|x| < clearance` around the path of the camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_half: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub clearance: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            x_half: 8.0,
            y_min: -2.5,
            y_max: 1.5,
            z_min: -2.0,
            z_max: 60.0,
            clearance: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_landmarks: usize,
    /// Fraction of landmarks per region class; must sum to 1.
    pub region_mix: BTreeMap<RegionClass, f64>,
    pub bounds: Bounds,
    /// When set, region classes are assigned to contiguous slabs of this
    /// length along z instead of independently per landmark.
    #[serde(default)]
    pub patch_length: Option<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 1000,
            region_mix: BTreeMap::from([(RegionClass::Clean, 1.0)]),
            bounds: Bounds::default(),
            patch_length: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub region_class: RegionClass,
    pub texture_freq: f64,
    pub brightness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub landmarks: Vec<Landmark>,
    pub seed: u64,
}

impl World {
    pub fn class_count(&self, class: RegionClass) -> usize {
        self.landmarks.iter().filter(|l| l.region_class == class).count()
    }
}

/// Splits `n` items among the classes of `mix` with largest-remainder rounding.
fn class_counts(n: usize, mix: &BTreeMap<RegionClass, f64>) -> Vec<(RegionClass, usize)> {
    let mut counts: Vec<(RegionClass, usize, f64)> = mix
        .iter()
        .map(|(c, f)| {
            let exact = f * n as f64;
            (*c, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i].1 += 1;
    }
    counts.into_iter().map(|(c, k, _)| (c, k)).collect()
}

fn appearance<R: Rng>(class: RegionClass, rng: &mut R) -> (f64, f64) {
    match class {
        RegionClass::Clean => (rng.random_range(0.1..0.5), rng.random_range(0.35..0.75)),
        RegionClass::Shadow => (rng.random_range(0.1..0.5), rng.random_range(0.05..0.3)),
        RegionClass::Reflection => (rng.random_range(0.05..0.3), rng.random_range(0.7..1.0)),
        RegionClass::TextureHigh => (rng.random_range(0.7..1.0), rng.random_range(0.35..0.75)),
    }
}

/// Samples a world. Output is a pure function of `(cfg, seed)`.
pub fn build_world(cfg: &WorldConfig, seed: u64) -> Result<World> {
    if cfg.n_landmarks == 0 {
        return Err(invalid("world needs at least one landmark"));
    }
    if cfg.region_mix.is_empty() {
        return Err(invalid("region mix is empty"));
    }
    if cfg.region_mix.values().any(|f| !(*f >= 0.0)) {
        return Err(invalid("region fractions must be nonnegative"));
    }
    let total: f64 = cfg.region_mix.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("region mix sums to {total}, expected 1")));
    }
    let b = &cfg.bounds;
    if !(b.x_half > b.clearance && b.y_max > b.y_min && b.z_max > b.z_min && b.clearance >= 0.0) {
        return Err(invalid("degenerate world bounds"));
    }

    let mut rng = stream_rng(seed, 0x5701);
    let positions: Vec<Vector3<f64>> = (0..cfg.n_landmarks)
        .map(|_| {
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let x = side * rng.random_range(b.clearance..b.x_half);
            let y = rng.random_range(b.y_min..b.y_max);
            let z = rng.random_range(b.z_min..b.z_max);
            Vector3::new(x, y, z)
        })
        .collect();

    // Order in which landmarks receive classes.
    let mut order: Vec<usize> = (0..positions.len()).collect();
    match cfg.patch_length {
        Some(len) if len > 0.0 => {
            let patch_of = |p: &Vector3<f64>| ((p.z - b.z_min) / len).floor() as i64;
            let mut patches: Vec<i64> = positions.iter().map(patch_of).collect();
            patches.sort_unstable();
            patches.dedup();
            patches.shuffle(&mut rng);
            let rank: BTreeMap<i64, usize> = patches.iter().enumerate().map(|(r, p)| (*p, r)).collect();
            order.sort_by(|&i, &j| {
                rank[&patch_of(&positions[i])]
                    .cmp(&rank[&patch_of(&positions[j])])
                    .then(positions[i].z.total_cmp(&positions[j].z))
            });
        }
        _ => order.shuffle(&mut rng),
    }

    let mut classes = vec![RegionClass::Clean; positions.len()];
    let mut cursor = 0;
    for (class, count) in class_counts(positions.len(), &cfg.region_mix) {
        for &i in &order[cursor..cursor + count] {
            classes[i] = class;
        }
        cursor += count;
    }

    let landmarks = positions
        .into_iter()
        .zip(classes)
        .map(|(position, region_class)| {
            let (texture_freq, brightness) = appearance(region_class, &mut rng);
            Landmark {
                position,
                region_class,
                texture_freq,
                brightness,
            }
        })
        .collect();
    Ok(World { landmarks, seed })
}
