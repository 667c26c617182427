//! Shared domain types: poses, cameras, observation context, error samples
//! and parametric error distributions.

mod camera;
mod context;
mod dist;
mod label;
mod pose;
mod sample;

pub use camera::{CameraIntrinsics, MIN_DEPTH};
pub use context::{layout, ContextFeatures, RegionClass};
pub use dist::ParametricErrorDist;
pub use label::FailureLabel;
pub(crate) use dist::huber_rho;
pub use pose::Pose3;
pub use sample::{
    compose_error, read_samples_csv, samples_from_json, samples_to_json, write_samples_csv, ErrorSample,
    SampleSource,
};
