use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::World;
use crate::domain::{CameraIntrinsics, ContextFeatures, Pose3, RegionClass, MIN_DEPTH};
use crate::error::{invalid, Result};
use crate::rng::stream_rng;

/// Pixel noise of one region class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassNoise {
    pub sigma_px: f64,
    pub outlier_rate: f64,
    pub outlier_radius: f64,
    /// Fraction of the outlier displacement shared by all outliers of this
    /// class within one frame (0: independent, 1: one common offset).
    #[serde(default)]
    pub outlier_coherence: f64,
}

impl ClassNoise {
    pub const ZERO: ClassNoise = ClassNoise {
        sigma_px: 0.0,
        outlier_rate: 0.0,
        outlier_radius: 0.0,
        outlier_coherence: 0.0,
    };

    pub fn gaussian(sigma_px: f64) -> Self {
        Self {
            sigma_px,
            ..Self::ZERO
        }
    }
}

/// Context-dependent (heteroscedastic) noise model; classes not listed are noise-free.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub classes: BTreeMap<RegionClass, ClassNoise>,
}

impl NoiseProfile {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with(mut self, class: RegionClass, noise: ClassNoise) -> Self {
        self.classes.insert(class, noise);
        self
    }

    pub fn get(&self, class: RegionClass) -> ClassNoise {
        self.classes.get(&class).copied().unwrap_or(ClassNoise::ZERO)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, n) in &self.classes {
            if !(n.sigma_px.is_finite() && n.sigma_px >= 0.0) {
                return Err(invalid(format!("{}: sigma must be finite and nonnegative", c.name())));
            }
            if !(0.0..=0.9).contains(&n.outlier_rate) {
                return Err(invalid(format!("{}: outlier rate must lie in [0, 0.9]", c.name())));
            }
            if !(n.outlier_radius >= 0.0) || !(0.0..=1.0).contains(&n.outlier_coherence) {
                return Err(invalid(format!("{}: invalid outlier parameters", c.name())));
            }
        }
        Ok(())
    }
}

/// Feature-sensor parameters beyond the noise model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub noise: NoiseProfile,
    /// Landmarks farther than this (camera-frame depth) are not detected.
    pub max_range_m: f64,
    /// Standard deviation assigned to every feature's extraction scale, pixels.
    pub scale_sigma: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            noise: NoiseProfile::zero(),
            max_range_m: 25.0,
            scale_sigma: 1.0,
        }
    }
}

/// One stereo feature observation of a landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureObservation {
    pub landmark_id: usize,
    /// Left-image pixel.
    pub pixel: Vector2<f64>,
    /// Right-image pixel.
    pub pixel_right: Vector2<f64>,
    pub scale_sigma: f64,
    pub context: ContextFeatures,
    pub region: RegionClass,
    /// Ground-truth camera-frame depth.
    pub depth: f64,
    /// Whether the outlier process fired (simulator ground truth).
    pub is_outlier: bool,
}

fn uniform_in_disc<R: Rng>(rng: &mut R, radius: f64) -> Vector2<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random_range(0.0..2.0 * PI);
    Vector2::new(r * a.cos(), r * a.sin())
}

/// Exact left/right projections of a landmark, if it is visible.
pub fn visible_projection(
    intr: &CameraIntrinsics,
    pose: &Pose3,
    point: &Vector3<f64>,
    max_range: f64,
) -> Option<(Vector3<f64>, Vector2<f64>, Vector2<f64>)> {
    let pc = pose.inverse().transform_point(point);
    if !(pc.z > MIN_DEPTH) || pc.z > max_range {
        return None;
    }
    let left = intr.project_camera(&pc).ok()?;
    let right = intr.project_right_camera(&pc).ok()?;
    (intr.contains(&left) && intr.contains(&right)).then_some((pc, left, right))
}

/// Simulates the feature front end for one frame.
///
/// Visible landmarks are projected into both cameras and corrupted with the
/// Gaussian noise of their region class. With probability `outlier_rate` an
/// observation is additionally displaced uniformly within `outlier_radius`.
/// The same displacement is applied to the left and right pixel.
pub fn observe_features(
    world: &World,
    pose: &Pose3,
    intr: &CameraIntrinsics,
    sensor: &SensorConfig,
    seed: u64,
) -> Vec<FeatureObservation> {
    let mut rng = stream_rng(seed, 0x0b5e);
    // One shared offset per class for this frame.
    let shared: BTreeMap<RegionClass, Vector2<f64>> = RegionClass::ALL
        .iter()
        .map(|c| (*c, uniform_in_disc(&mut rng, sensor.noise.get(*c).outlier_radius)))
        .collect();
    let mut out = Vec::new();
    for (id, lm) in world.landmarks.iter().enumerate() {
        let Some((pc, left, right)) = visible_projection(intr, pose, &lm.position, sensor.max_range_m) else {
            continue;
        };
        let noise = sensor.noise.get(lm.region_class);
        let gauss = |rng: &mut rand_chacha::ChaCha8Rng| -> Vector2<f64> {
            if noise.sigma_px > 0.0 {
                let n = Normal::new(0.0, noise.sigma_px).expect("finite sigma");
                Vector2::new(n.sample(rng), n.sample(rng))
            } else {
                Vector2::zeros()
            }
        };
        let nl = gauss(&mut rng);
        let nr = gauss(&mut rng);
        let is_outlier = noise.outlier_rate > 0.0 && rng.random_bool(noise.outlier_rate);
        let disp = if is_outlier {
            let own = uniform_in_disc(&mut rng, noise.outlier_radius);
            shared[&lm.region_class] * noise.outlier_coherence + own * (1.0 - noise.outlier_coherence)
        } else {
            Vector2::zeros()
        };
        let context = ContextFeatures::from_parts(
            lm.region_class,
            lm.texture_freq,
            lm.brightness,
            left.x / intr.width as f64,
            left.y / intr.height as f64,
            1.0 / pc.z,
        )
        .expect("finite context");
        out.push(FeatureObservation {
            landmark_id: id,
            pixel: left + nl + disp,
            pixel_right: right + nr + disp,
            scale_sigma: sensor.scale_sigma,
            context,
            region: lm.region_class,
            depth: pc.z,
            is_outlier,
        });
    }
    out
}

/// Dense depth image, row-major, meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    /// Value stored where no surface was seen.
    pub sentinel: f64,
}

impl DepthImage {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Depth at the pixel nearest to `px`, or `None` outside the image.
    pub fn sample(&self, px: &Vector2<f64>) -> Option<f64> {
        let (u, v) = (px.x.round(), px.y.round());
        (u >= 0.0 && v >= 0.0 && (u as usize) < self.width && (v as usize) < self.height)
            .then(|| self.get(u as usize, v as usize))
    }

    pub fn is_sentinel(&self, d: f64) -> bool {
        d == self.sentinel
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisoryConfig {
    pub sigma_sup: f64,
    pub r_max: f64,
    /// Radius of the fronto-parallel disc each landmark is rendered as, meters.
    pub disc_radius_m: f64,
}

impl Default for SupervisoryConfig {
    fn default() -> Self {
        Self {
            sigma_sup: 0.02,
            r_max: 10.0,
            disc_radius_m: 0.05,
        }
    }
}

/// Noise-free depth of the nearest rendered disc per pixel (`+∞` where no
/// surface is hit), row-major.
pub fn render_zbuffer(world: &World, pose: &Pose3, intr: &CameraIntrinsics, disc_radius_m: f64) -> Vec<f64> {
    let (w, h) = (intr.width, intr.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let inv = pose.inverse();
    for lm in &world.landmarks {
        let pc = inv.transform_point(&lm.position);
        if !(pc.z > MIN_DEPTH) {
            continue;
        }
        let Ok(center) = intr.project_camera(&pc) else { continue };
        let rad = intr.fx * disc_radius_m / pc.z;
        let (u0, u1) = ((center.x - rad).ceil().max(0.0), (center.x + rad).floor().min(w as f64 - 1.0));
        let (v0, v1) = ((center.y - rad).ceil().max(0.0), (center.y + rad).floor().min(h as f64 - 1.0));
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for v in v0 as usize..=v1 as usize {
            for u in u0 as usize..=u1 as usize {
                let (du, dv) = (u as f64 - center.x, v as f64 - center.y);
                if du * du + dv * dv <= rad * rad {
                    let z = &mut zbuf[v * w + u];
                    if pc.z < *z {
                        *z = pc.z;
                    }
                }
            }
        }
    }
    zbuf
}

/// Turns a z-buffer into a supervisory depth image: Gaussian noise on every
/// surface pixel, `r_max` where no surface was hit.
pub fn supervisory_from_zbuffer(
    zbuf: &[f64],
    intr: &CameraIntrinsics,
    cfg: &SupervisoryConfig,
    seed: u64,
) -> Result<DepthImage> {
    if !(cfg.sigma_sup >= 0.0) {
        return Err(invalid("supervisory sigma must be nonnegative"));
    }
    if zbuf.len() != intr.width * intr.height {
        return Err(invalid("z-buffer size does not match the camera"));
    }
    let mut rng = stream_rng(seed, 0xde9);
    let noise = (cfg.sigma_sup > 0.0).then(|| Normal::new(0.0, cfg.sigma_sup).expect("finite sigma"));
    let data = zbuf
        .iter()
        .map(|&z| {
            if z.is_finite() {
                z + noise.as_ref().map_or(0.0, |n| n.sample(&mut rng))
            } else {
                cfg.r_max
            }
        })
        .collect();
    Ok(DepthImage {
        width: intr.width,
        height: intr.height,
        data,
        sentinel: cfg.r_max,
    })
}

/// Renders the supervisory depth sensor: nearest disc surface per pixel
/// plus Gaussian noise; pixels without a surface hold `r_max`.
pub fn supervisory_depth(
    world: &World,
    pose: &Pose3,
    intr: &CameraIntrinsics,
    cfg: &SupervisoryConfig,
    seed: u64,
) -> Result<DepthImage> {
    supervisory_from_zbuffer(&render_zbuffer(world, pose, intr, cfg.disc_radius_m), intr, cfg, seed)
}
