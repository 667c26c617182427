use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ipercept::domain::{read_samples_csv, write_samples_csv, ContextFeatures, ErrorSample};
use ipercept::error::{Error, Result};
use ipercept::experiment::bench::write_bench_csv;
use ipercept::experiment::depth::{method_predictions, prepare_depth_seed, DepthEstimator};
use ipercept::experiment::slam::{costmap_examples, frame_costmap, slam_sessions, train_slam_introspector};
use ipercept::experiment::{bench_depth_models, latency_ratio, parse_seeds, run_depth_experiment, run_slam_experiment, ExperimentConfig};
use ipercept::introspect::{cluster_failures, cluster_purity, train_regressor, write_loss_history_csv, IntrospectionModel};
use ipercept::labeler::collect_dataset;
use ipercept::rng::mix_seed;
use ipercept::slam::write_tum;

#[derive(Parser)]
#[command(name = "ipercept", version, about = "Introspective perception experiments on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; defaults to the built-in challenge scene.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `a..b` or list `x,y,z`.
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated method list.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. `--set tracking.n_min=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Label a training session with both self-supervised labelers.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Also write the world as JSON.
        #[arg(long)]
        dump_world: Option<PathBuf>,
        /// Also write the cost-map of this frame (grid and mask CSV).
        #[arg(long)]
        dump_costmap: Option<u64>,
    },
    /// Fit the error regressor on labeled samples.
    Train {
        #[command(flatten)]
        common: Common,
        /// Samples CSV from `collect`; labels a fresh session when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Predict normalized costs for the contexts of a samples CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Adaptive versus constant Huber parameters in bundle adjustment.
    SlamEval {
        #[command(flatten)]
        common: Common,
    },
    /// Depth failure prediction against ensemble baselines.
    DepthEval {
        #[command(flatten)]
        common: Common,
    },
    /// Inference latency of the introspector and the ensembles.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        queries: usize,
    },
    /// k-means over the contexts of predicted depth failures.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        k: usize,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let base = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::challenge(),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &c.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(m) = &c.method {
        cfg.methods = m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn collect(cfg: &ExperimentConfig, dump_world: Option<&Path>, dump_costmap: Option<u64>) -> Result<()> {
    let seed = cfg.seeds[0];
    let sessions = slam_sessions(cfg, seed)?;
    let data = collect_dataset(
        &sessions.train_world,
        &sessions.train_trajectory,
        &cfg.intrinsics,
        &sessions.train_observations,
        &cfg.labeler,
        mix_seed(seed, 7),
    )?;
    write_samples_csv(&data.samples, out_file(&cfg.out_dir, "samples.csv")?)?;
    write_tum(&sessions.train_trajectory, out_file(&cfg.out_dir, "trajectory.tum")?)?;
    if let Some(path) = dump_world {
        fs::write(path, serde_json::to_string(&sessions.train_world)?)?;
    }
    if let Some(frame) = dump_costmap {
        let map = frame_costmap(&data.samples, frame, cfg)?;
        map.write_grid_csv(out_file(&cfg.out_dir, &format!("costmap_{frame}.csv"))?)?;
        map.write_mask_csv(out_file(&cfg.out_dir, &format!("costmap_{frame}_mask.csv"))?)?;
    }
    let s = &data.stats;
    println!(
        "seed {seed}: {} samples from {} observations ({} frames gated out, {} skipped)",
        data.samples.len(),
        s.observations,
        s.frames_gated_out,
        s.skipped
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, samples: Option<&Path>) -> Result<()> {
    let seed = cfg.seeds[0];
    let model = match samples {
        Some(p) => {
            let samples = read_samples_csv(File::open(p)?)?;
            let mut tc = cfg.train.clone();
            tc.seed = mix_seed(seed, 8);
            train_regressor(&costmap_examples(&samples, cfg)?, &tc)?
        }
        None => train_slam_introspector(cfg, &slam_sessions(cfg, seed)?, seed)?.1,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("model.json"), model.model.to_json()?)?;
    write_loss_history_csv(&model.history, out_file(&cfg.out_dir, "loss_history.csv")?)?;
    if let Some(last) = model.history.last() {
        println!("trained {} epochs: train loss {:.5}, validation loss {:.5}", model.history.len(), last.train, last.val);
    }
    Ok(())
}

fn predict(cfg: &ExperimentConfig, model: &Path, samples: &Path) -> Result<()> {
    let model = IntrospectionModel::from_json(&fs::read_to_string(model)?)?;
    let samples: Vec<ErrorSample> = read_samples_csv(File::open(samples)?)?;
    let mut w = csv::Writer::from_writer(out_file(&cfg.out_dir, "predictions.csv")?);
    w.write_record(["frame_id", "magnitude", "predicted_cost"])?;
    for s in &samples {
        w.serialize((s.frame_id, s.magnitude, model.cost(&s.context)?))?;
    }
    w.flush()?;
    println!("{} predictions written", samples.len());
    Ok(())
}

fn slam_eval(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_slam_experiment(cfg)?;
    report.write_to(&cfg.out_dir)?;
    for a in &report.aggregates {
        println!(
            "{:10} trans {:.3}% rot {:.4} deg/m failures {} mdbf {:.2} m",
            a.method, a.mean_trans_err_pct, a.mean_rot_err_deg_per_m, a.total_failures, a.mean_mdbf_m
        );
    }
    report_failed(&report.failed)
}

fn depth_eval(cfg: &ExperimentConfig) -> Result<()> {
    let report = run_depth_experiment(cfg)?;
    report.write_to(&cfg.out_dir)?;
    for a in &report.aggregates {
        println!("{:4} {:18} P {:.3} R {:.3} F1 {:.3} NLL {:.4}", a.split, a.method, a.precision, a.recall, a.f1, a.nll);
    }
    report_failed(&report.failed)
}

fn report_failed(failed: &[(u64, String)]) -> Result<()> {
    for (seed, e) in failed {
        eprintln!("seed {seed} failed: {e}");
    }
    match failed.len() {
        0 => Ok(()),
        n => Err(Error::InvalidInput(format!("{n} seed(s) failed"))),
    }
}

fn bench(cfg: &ExperimentConfig, n_queries: usize) -> Result<()> {
    let seed = cfg.seeds[0];
    let prepared = prepare_depth_seed(cfg, seed)?;
    let queries: Vec<ContextFeatures> = prepared.test_id.iter().flat_map(|f| f.cells.iter().map(|c| c.context.clone())).collect();
    let rows = bench_depth_models(&prepared.models, cfg.depth.alpha, &queries, n_queries)?;
    write_bench_csv(&rows, out_file(&cfg.out_dir, "bench.csv")?)?;
    for r in &rows {
        println!("{:14} {} passes {:10.1} ns/query {:8} bytes", r.method, r.passes, r.mean_latency_ns, r.working_set_bytes);
    }
    for slow in ["ipr-ensemble", "ensemble"] {
        if let Some(ratio) = latency_ratio(&rows, "ipr", slow) {
            println!("{slow} / ipr latency: {ratio:.2} (N = {})", cfg.depth.n_members);
        }
    }
    Ok(())
}

fn cluster(cfg: &ExperimentConfig, k: usize) -> Result<()> {
    let seed = cfg.seeds[0];
    let prepared = prepare_depth_seed(cfg, seed)?;
    let (p, _) = method_predictions(&prepared.models, "ipr", &prepared.test_id, &cfg.depth)?;
    let cells = DepthEstimator::Single(&prepared.models.single).label(&prepared.test_id, cfg.depth.alpha, cfg.depth.supervisory.r_max);
    let flagged: Vec<&ContextFeatures> = cells.iter().zip(&p).filter(|(_, p)| **p > 0.5).map(|(c, _)| &c.context).collect();
    if flagged.len() < k {
        return Err(Error::Empty(format!("{} predicted failures for k = {k}", flagged.len())));
    }
    let points: Vec<&[f64]> = flagged.iter().map(|c| c.as_slice()).collect();
    let clustering = cluster_failures(&points, k, mix_seed(seed, 30))?;
    let truth: Vec<usize> = flagged.iter().map(|c| c.region().map_or(0, |r| r.index())).collect();
    let mut w = csv::Writer::from_writer(out_file(&cfg.out_dir, "clusters.csv")?);
    w.write_record(["cell", "cluster", "region"])?;
    for (i, (a, t)) in clustering.assignments.iter().zip(&truth).enumerate() {
        w.serialize((i, a, t))?;
    }
    w.flush()?;
    println!(
        "{} predicted failures, k = {k}, purity against region class {:.3}",
        flagged.len(),
        cluster_purity(&clustering.assignments, &truth)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { common, dump_world, dump_costmap } => collect(&load_config(&common)?, dump_world.as_deref(), dump_costmap),
        Command::Train { common, samples } => train(&load_config(&common)?, samples.as_deref()),
        Command::Predict { common, model, samples } => predict(&load_config(&common)?, &model, &samples),
        Command::SlamEval { common } => slam_eval(&load_config(&common)?),
        Command::DepthEval { common } => depth_eval(&load_config(&common)?),
        Command::Bench { common, queries } => bench(&load_config(&common)?, queries),
        Command::Cluster { common, k } => cluster(&load_config(&common)?, k),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
