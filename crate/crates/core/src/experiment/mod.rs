//! End-to-end experiment runners: configuration, the SLAM and depth
//! pipelines and report output.

pub mod bench;
mod config;
pub mod depth;
pub mod report;
pub mod slam;

pub use config::{parse_seeds, ExperimentConfig, GpSettings, TrajectorySettings};
pub use slam::{run_slam_experiment, SlamAggregate, SlamReport, SLAM_METHODS};
pub use depth::{run_depth_experiment, DepthAggregate, DepthReport, DepthScene, DepthSettings, DEPTH_METHODS};
pub use bench::{bench_depth_models, bench_inference, latency_ratio, BenchRow, BenchTarget};
