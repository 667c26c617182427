//! Tracks one test session with constant and with introspective Huber
//! parameters and compares drift and failures.

use ipercept::experiment::slam::{slam_sessions, train_slam_introspector};
use ipercept::experiment::ExperimentConfig;
use ipercept::slam::{mdbf, rpe, run_tracking, ThetaMode};

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge();
    let seed = 5;
    let s = slam_sessions(&cfg, seed)?;
    let (_, trained) = train_slam_introspector(&cfg, &s, seed)?;

    for (name, mode) in [("constant", ThetaMode::Constant), ("adaptive", ThetaMode::Introspective(&trained.model))] {
        let run = run_tracking(&s.test_observations, &s.test_trajectory, &cfg.intrinsics, &mode, cfg.train.theta_max, &cfg.tracking, 11)?;
        let err = rpe(&run.estimate, &s.test_trajectory, cfg.rpe_distance_m)?;
        let d = mdbf(&run.failures, &s.test_trajectory);
        println!(
            "{name:8} trans {:.2}%  rot {:.3} deg/m  failures {:2}  MDBF {:.1} m",
            err.trans_err_pct,
            err.rot_err_deg_per_m,
            run.failures.len(),
            d.meters
        );
    }
    Ok(())
}
