//! GP cost-map of one labeled frame, written as grid and mask CSV.

use std::fs::File;

use ipercept::experiment::slam::{frame_costmap, slam_sessions};
use ipercept::experiment::ExperimentConfig;
use ipercept::labeler::collect_dataset;

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge();
    let s = slam_sessions(&cfg, 0)?;
    let data = collect_dataset(&s.train_world, &s.train_trajectory, &cfg.intrinsics, &s.train_observations, &cfg.labeler, 1)?;
    let frame = data.samples[data.samples.len() / 2].frame_id;
    let map = frame_costmap(&data.samples, frame, &cfg)?;

    let confident = map.mask.iter().filter(|m| **m).count();
    let peak = map.grid.iter().cloned().fold(0.0, f64::max);
    println!("frame {frame}: {}x{} lattice, {confident} confident cells, peak cost {peak:.3}", map.width, map.height);

    let dir = std::env::temp_dir();
    map.write_grid_csv(File::create(dir.join("costmap.csv"))?)?;
    map.write_mask_csv(File::create(dir.join("costmap_mask.csv"))?)?;
    println!("written to {}", dir.display());
    Ok(())
}
