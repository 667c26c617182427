use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Pose3;
use crate::error::{invalid, Result};
use crate::rng::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StampedPose {
    pub frame: u64,
    pub pose: Pose3,
}

/// Camera-to-world poses indexed by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<StampedPose>,
    pub frame_rate: f64,
}

/// Largest translation allowed between consecutive poses.
pub const MAX_STEP_M: f64 = 5.0;

impl Trajectory {
    pub fn new(poses: Vec<StampedPose>, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0) {
            return Err(invalid("frame rate must be positive"));
        }
        for w in poses.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(invalid("frame indices must be strictly increasing"));
            }
            if (w[1].pose.translation - w[0].pose.translation).norm() >= MAX_STEP_M {
                return Err(invalid("consecutive poses are too far apart"));
            }
        }
        Ok(Self { poses, frame_rate })
    }

    pub fn from_poses(poses: Vec<Pose3>, frame_rate: f64) -> Result<Self> {
        Self::new(
            poses
                .into_iter()
                .enumerate()
                .map(|(i, pose)| StampedPose { frame: i as u64, pose })
                .collect(),
            frame_rate,
        )
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn pose(&self, i: usize) -> &Pose3 {
        &self.poses[i].pose
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.poses[i].frame as f64 / self.frame_rate
    }

    /// Cumulative distance travelled up to each pose.
    pub fn cumulative_length(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.poses.len());
        for (i, p) in self.poses.iter().enumerate() {
            if i > 0 {
                acc += (p.pose.translation - self.poses[i - 1].pose.translation).norm();
            }
            out.push(acc);
        }
        out
    }

    pub fn path_length(&self) -> f64 {
        self.cumulative_length().last().copied().unwrap_or(0.0)
    }

    /// Applies `t ∘ pose` to every pose.
    pub fn transformed(&self, t: &Pose3) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|p| StampedPose {
                    frame: p.frame,
                    pose: t.compose(&p.pose),
                })
                .collect(),
            frame_rate: self.frame_rate,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryPreset {
    Gentle,
    HighTurnRate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub n_frames: usize,
    /// Forward motion per frame, meters.
    pub step_m: f64,
    pub frame_rate: f64,
    /// Peak heading deviation, radians.
    pub yaw_amplitude: f64,
    /// Period of the heading oscillation, frames.
    pub yaw_period: f64,
    /// Start position along z.
    #[serde(default)]
    pub z_start: f64,
}

impl TrajectoryConfig {
    pub fn preset(preset: TrajectoryPreset, n_frames: usize) -> Self {
        match preset {
            TrajectoryPreset::Gentle => Self {
                n_frames,
                step_m: 0.5,
                frame_rate: 10.0,
                yaw_amplitude: 0.15,
                yaw_period: 60.0,
                z_start: 0.0,
            },
            TrajectoryPreset::HighTurnRate => Self {
                n_frames,
                step_m: 0.5,
                frame_rate: 10.0,
                yaw_amplitude: 0.35,
                yaw_period: 24.0,
                z_start: 0.0,
            },
        }
    }
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self::preset(TrajectoryPreset::Gentle, 60)
    }
}

/// Smooth forward-moving path with an oscillating heading (rotation about
/// the camera's y axis). The phase of the oscillation is drawn from `seed`.
pub fn generate_trajectory(cfg: &TrajectoryConfig, seed: u64) -> Result<Trajectory> {
    if cfg.n_frames == 0 {
        return Err(invalid("trajectory needs at least one frame"));
    }
    if !(cfg.step_m > 0.0 && cfg.step_m < MAX_STEP_M && cfg.yaw_period > 0.0) {
        return Err(invalid("invalid trajectory parameters"));
    }
    let phase = stream_rng(seed, 0x7247).random_range(0.0..2.0 * PI);
    // start offset that centres the lateral oscillation on x = 0
    let x0 = -cfg.step_m * cfg.yaw_amplitude * cfg.yaw_period / (2.0 * PI) * phase.cos();
    let mut pos = Vector3::new(x0, 0.0, cfg.z_start);
    let mut poses = Vec::with_capacity(cfg.n_frames);
    for k in 0..cfg.n_frames {
        let yaw = cfg.yaw_amplitude * (2.0 * PI * k as f64 / cfg.yaw_period + phase).sin();
        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw);
        poses.push(Pose3::new(rot, pos));
        pos += cfg.step_m * Vector3::new(yaw.sin(), 0.0, yaw.cos());
    }
    Trajectory::from_poses(poses, cfg.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_path_is_valid() {
        for preset in [TrajectoryPreset::Gentle, TrajectoryPreset::HighTurnRate] {
            let t = generate_trajectory(&TrajectoryConfig::preset(preset, 80), 4).unwrap();
            assert_eq!(t.len(), 80);
            assert!((t.path_length() - 79.0 * 0.5).abs() < 1e-9);
            let max_x = t.poses.iter().map(|p| p.pose.translation.x.abs()).fold(0.0, f64::max);
            assert!(max_x < 1.0, "lateral excursion {max_x}");
            // lateral excursion stays inside the default corridor clearance
            assert!(t.poses.iter().all(|p| p.pose.translation.x.abs() < 1.5));
        }
    }

    #[test]
    fn rejects_non_increasing_frames() {
        let p = StampedPose { frame: 3, pose: Pose3::identity() };
        assert!(Trajectory::new(vec![p, p], 10.0).is_err());
    }

    #[test]
    fn rejects_large_jumps() {
        let a = Pose3::identity();
        let b = Pose3::from_translation(Vector3::new(0.0, 0.0, 6.0));
        assert!(Trajectory::from_poses(vec![a, b], 10.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let t = generate_trajectory(&TrajectoryConfig::default(), 9).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Trajectory>(&s).unwrap(), t);
    }
}
