//! Multi-seed SLAM experiment with report files and sorting-curve areas.

use ipercept::experiment::{run_slam_experiment, ExperimentConfig};

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge().with_overrides(&["seeds=[0,1,2,3]"])?;
    let report = run_slam_experiment(&cfg)?;
    for a in &report.aggregates {
        println!("{:8} trans {:.2}%  failures {:3}  MDBF {:.1} m", a.method, a.mean_trans_err_pct, a.total_failures, a.mean_mdbf_m);
    }
    for (seed, c) in &report.curves {
        println!("seed {seed}: area ideal {:.2}  introspection {:.2}  random {:.2}", c.area_ideal(), c.area_predicted(), c.area_random());
    }

    let dir = std::env::temp_dir().join("ipercept-slam");
    for path in report.write_to(&dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
