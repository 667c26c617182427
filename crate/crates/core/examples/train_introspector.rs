//! Trains the error regressor on GP cost-map targets and maps its predicted
//! cost to per-observation Huber parameters.

use ipercept::domain::RegionClass;
use ipercept::experiment::slam::{slam_sessions, train_slam_introspector};
use ipercept::experiment::ExperimentConfig;
use ipercept::introspect::theta_from_cost;

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge();
    let sessions = slam_sessions(&cfg, 3)?;
    let (samples, trained) = train_slam_introspector(&cfg, &sessions, 3)?;
    let last = trained.history.last().expect("at least one epoch");
    println!("{} samples, {} epochs, val loss {:.4}", samples.len(), trained.history.len(), last.val);

    for class in [RegionClass::Clean, RegionClass::Shadow] {
        let costs: Vec<f64> = sessions
            .test_observations
            .iter()
            .flatten()
            .filter(|o| o.context.region() == Some(class))
            .map(|o| trained.model.cost(&o.context))
            .collect::<ipercept::Result<_>>()?;
        let c = costs.iter().sum::<f64>() / costs.len() as f64;
        println!("{:7} mean cost {c:.3} -> theta {:.3}", class.name(), theta_from_cost(c, cfg.train.theta_max)?);
    }
    Ok(())
}
