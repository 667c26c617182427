//! Depth failure prediction: introspection versus ensemble baselines on the
//! in-distribution and out-of-distribution test sessions.

use ipercept::experiment::{run_depth_experiment, ExperimentConfig};

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge().with_overrides(&["seeds=[0,1,2]"])?;
    let report = run_depth_experiment(&cfg)?;
    println!("split method              precision recall   f1     nll");
    for a in &report.aggregates {
        println!("{:5} {:18} {:9.3} {:6.3} {:6.3} {:7.4}", a.split, a.method, a.precision, a.recall, a.f1, a.nll);
    }
    for (seed, ens, mcd) in &report.sigma2 {
        println!("seed {seed}: calibrated sigma^2 ensemble {ens:.3}, dropout {mcd:.3}");
    }
    Ok(())
}
