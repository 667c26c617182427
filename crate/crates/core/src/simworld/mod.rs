//! Seeded synthetic world: landmarks, camera trajectories and sensors with
//! context-dependent noise. Everything here is a pure function of its inputs
//! and a seed.

mod sensors;
mod trajectory;
mod world;

pub use sensors::{
    observe_features, render_zbuffer, supervisory_depth, supervisory_from_zbuffer, visible_projection, ClassNoise, DepthImage, FeatureObservation,
    NoiseProfile, SensorConfig, SupervisoryConfig,
};
pub use trajectory::{generate_trajectory, StampedPose, Trajectory, TrajectoryConfig, TrajectoryPreset, MAX_STEP_M};
pub use world::{build_world, Bounds, Landmark, World, WorldConfig};
