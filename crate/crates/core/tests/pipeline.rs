use ipercept::depth::DepthFaultProfile;
use ipercept::experiment::depth::{prepare_depth_seed, DEPTH_METHODS};
use ipercept::experiment::{bench_depth_models, latency_ratio, run_depth_experiment, run_slam_experiment, ExperimentConfig};
use ipercept::simworld::NoiseProfile;

#[test]
fn trivial_slam_run_has_no_error() {
    let report = run_slam_experiment(&ExperimentConfig::trivial()).unwrap();
    assert!(report.failed.is_empty(), "{:?}", report.failed);
    assert_eq!(report.rows.len(), 2 * 2);
    for r in &report.rows {
        assert!(r.trans_err_pct < 1e-3, "{r:?}");
        assert!(r.rot_err_deg_per_m < 1e-3, "{r:?}");
        assert_eq!(r.failures, 0, "{r:?}");
    }
}

#[test]
fn failing_seed_keeps_row_count() {
    let cfg = ExperimentConfig::trivial().with_overrides(&["world.n_landmarks=0"]).unwrap();
    let report = run_slam_experiment(&cfg).unwrap();
    assert_eq!(report.failed.len(), 2);
    assert_eq!(report.rows.len(), cfg.seeds.len() * report.methods.len());
    assert!(report.rows.iter().all(|r| r.trans_err_pct.is_nan() && r.mdbf_m.is_nan()));
}

#[test]
fn perfect_depth_estimator_has_well_defined_scores() {
    let mut cfg = ExperimentConfig::challenge().with_overrides(&["seeds=[0]"]).unwrap();
    for scene in [&mut cfg.depth.id_scene, &mut cfg.depth.ood_scene] {
        scene.noise = NoiseProfile::zero();
        scene.faults = DepthFaultProfile::default();
    }
    let report = run_depth_experiment(&cfg).unwrap();
    assert!(report.failed.is_empty(), "{:?}", report.failed);
    assert_eq!(report.id_rows.len(), DEPTH_METHODS.len());
    for a in &report.aggregates {
        assert!(a.nll.is_finite() && a.nll >= 0.0, "{a:?}");
        assert!(a.nll < 0.1, "{a:?}");
    }
}

#[test]
fn bench_ratio_matches_member_count() {
    let cfg = ExperimentConfig::challenge().with_overrides(&["depth.n_members=3"]).unwrap();
    let prepared = prepare_depth_seed(&cfg, 1).unwrap();
    let queries: Vec<_> = prepared.test_id.iter().flat_map(|f| f.cells.iter().map(|c| c.context.clone())).collect();
    let ratio = || {
        let rows = bench_depth_models(&prepared.models, cfg.depth.alpha, &queries, 20_000).unwrap();
        assert!(rows.iter().all(|r| r.n_queries == 20_000));
        latency_ratio(&rows, "ipr", "ipr-ensemble").unwrap()
    };
    let (a, b) = (ratio(), ratio());
    assert!((a - 3.0).abs() <= 0.5, "{a}");
    assert!((a - b).abs() / a.max(b) <= 0.2, "{a} vs {b}");
}
