//! Self-supervised labeling: cross-sensor and spatio-temporal error samples
//! on the challenge scene, split by region class.

use ipercept::domain::{RegionClass, SampleSource};
use ipercept::experiment::slam::slam_sessions;
use ipercept::experiment::ExperimentConfig;
use ipercept::labeler::collect_dataset;
use ipercept::stats::{mean, welch_greater};

fn main() -> ipercept::Result<()> {
    let cfg = ExperimentConfig::challenge();
    let s = slam_sessions(&cfg, 0)?;
    let data = collect_dataset(&s.train_world, &s.train_trajectory, &cfg.intrinsics, &s.train_observations, &cfg.labeler, 1)?;
    println!("{} samples, stats {:?}", data.samples.len(), data.stats);

    for source in [SampleSource::CrossSensor, SampleSource::SpatioTemporal] {
        let by_class = |c: RegionClass| -> Vec<f64> {
            data.samples
                .iter()
                .filter(|x| x.source == source && x.context.region() == Some(c))
                .map(|x| x.magnitude)
                .collect()
        };
        let (shadow, clean) = (by_class(RegionClass::Shadow), by_class(RegionClass::Clean));
        println!(
            "{:16} clean {:.2} px (n={}), shadow {:.2} px (n={}), Welch p = {:.2e}",
            source.as_str(),
            mean(&clean),
            clean.len(),
            mean(&shadow),
            shadow.len(),
            welch_greater(&shadow, &clean)
        );
    }
    Ok(())
}
