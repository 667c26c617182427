//! CPU latency of the single introspector against three-member ensembles.

use ipercept::domain::ContextFeatures;
use ipercept::experiment::depth::prepare_depth_seed;
use ipercept::experiment::{bench_depth_models, latency_ratio, ExperimentConfig};

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge().with_overrides(&["depth.n_members=3"])?;
    let prepared = prepare_depth_seed(&cfg, 0)?;
    let queries: Vec<ContextFeatures> = prepared.test_id.iter().flat_map(|f| f.cells.iter().map(|c| c.context.clone())).collect();
    let rows = bench_depth_models(&prepared.models, cfg.depth.alpha, &queries, 20_000)?;
    for r in &rows {
        println!("{:13} {} passes  {:8.1} ns/query  {:6} bytes", r.method, r.passes, r.mean_latency_ns, r.working_set_bytes);
    }
    println!("ensemble / ipr: {:.2}", latency_ratio(&rows, "ipr", "ensemble").unwrap_or(f64::NAN));
    Ok(())
}
