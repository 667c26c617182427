//! Builds the challenge world, flies the default trajectory through it and
//! prints what the camera sees.

use ipercept::domain::RegionClass;
use ipercept::experiment::ExperimentConfig;
use ipercept::labeler::frame_observations;
use ipercept::simworld::{build_world, generate_trajectory, TrajectoryConfig};
use ipercept::slam::write_tum;

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge();
    let world = build_world(&cfg.world, 7)?;
    for class in RegionClass::ALL {
        println!("{:12} {} landmarks", class.name(), world.class_count(class));
    }

    let traj = generate_trajectory(&TrajectoryConfig::preset(cfg.trajectory.preset, 80), 7)?;
    println!("trajectory: {} frames, {:.1} m", traj.len(), traj.path_length());
    let obs = frame_observations(&world, &traj, &cfg.intrinsics, &cfg.sensor, 7);
    for (i, frame) in obs.iter().enumerate().step_by(10) {
        let shadow = frame.iter().filter(|o| o.context.region() == Some(RegionClass::Shadow)).count();
        println!("frame {i:2}: {} features, {shadow} in shadow", frame.len());
    }

    let mut tum = Vec::new();
    write_tum(&traj, &mut tum)?;
    print!("{}", String::from_utf8_lossy(&tum).lines().take(3).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
