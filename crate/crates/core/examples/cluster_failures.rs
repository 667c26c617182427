//! Clusters the contexts of predicted depth failures in a scene with two
//! planted failure sources and checks that the clusters line up with them.

use ipercept::experiment::depth::{method_predictions, prepare_depth_seed, DepthEstimator};
use ipercept::experiment::ExperimentConfig;
use ipercept::introspect::{cluster_failures, cluster_purity};

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::two_failure_sources();
    let seed = 2;
    let prepared = prepare_depth_seed(&cfg, seed)?;
    let (p, _) = method_predictions(&prepared.models, "ipr", &prepared.test_id, &cfg.depth)?;
    let cells = DepthEstimator::Single(&prepared.models.single).label(&prepared.test_id, cfg.depth.alpha, cfg.depth.supervisory.r_max);

    let flagged: Vec<_> = cells.iter().zip(&p).filter(|(_, p)| **p > 0.5).map(|(c, _)| &c.context).collect();
    let points: Vec<&[f64]> = flagged.iter().map(|c| c.as_slice()).collect();
    let truth: Vec<usize> = flagged.iter().map(|c| c.region().map_or(0, |r| r.index())).collect();
    let clustering = cluster_failures(&points, 2, seed)?;
    println!(
        "{} predicted failures, {} iterations, purity {:.3}",
        flagged.len(),
        clustering.iterations,
        cluster_purity(&clustering.assignments, &truth)
    );
    Ok(())
}
