use std::hint::black_box;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::depth::DepthModels;
use crate::baselines::{failure_prob, DepthEnsemble, EnsembleKind};
use crate::domain::ContextFeatures;
use crate::error::{invalid, Error, Result};
use crate::introspect::{IntrospectionModel, Mlp};

/// Smallest query count accepted by [`bench_inference`].
pub const MIN_QUERIES: usize = 10_000;

/// A failure predictor under benchmark.
#[derive(Clone, Copy, Debug)]
pub enum BenchTarget<'a> {
    /// One or more failure classifiers whose probabilities are averaged.
    Introspector(&'a [IntrospectionModel]),
    /// Depth ensemble scored by the spread of its members.
    Ensemble(&'a DepthEnsemble, f64),
}

impl BenchTarget<'_> {
    fn networks(&self) -> Vec<&Mlp> {
        match self {
            BenchTarget::Introspector(ms) => ms
                .iter()
                .filter_map(|m| match m {
                    IntrospectionModel::Regressor(n) | IntrospectionModel::Classifier(n) => Some(n),
                    IntrospectionModel::Binned(_) => None,
                })
                .collect(),
            BenchTarget::Ensemble(e, _) => e.members.iter().collect(),
        }
    }

    /// Forward passes per query.
    pub fn passes(&self) -> usize {
        match self {
            BenchTarget::Introspector(ms) => ms.len(),
            BenchTarget::Ensemble(e, _) => match e.kind {
                EnsembleKind::Bootstrap => e.members.len(),
                EnsembleKind::McDropout => e.n_members,
            },
        }
    }

    /// Bytes of weights, input scaling and activation buffers of every network.
    pub fn working_set_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        self.networks()
            .iter()
            .map(|n| {
                let widths: usize = n.layers.iter().map(|l| l.n_in + l.n_out).sum();
                (n.n_params() + n.input_mean.len() + n.input_scale.len() + widths) * f
            })
            .sum()
    }

    fn p_failure(&self, context: &ContextFeatures) -> Result<f64> {
        match self {
            BenchTarget::Introspector(ms) => {
                let mut p = 0.0;
                for m in ms.iter() {
                    p += m.p_failure(context)?;
                }
                Ok(p / ms.len() as f64)
            }
            BenchTarget::Ensemble(e, alpha) => Ok(failure_prob(e.moments(context.as_slice()).1.sqrt(), *alpha)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub passes: usize,
    pub n_queries: usize,
    pub mean_latency_ns: f64,
    pub working_set_bytes: usize,
}

/// Timing rounds per method; the fastest round is reported so that a burst
/// of unrelated load does not land on one method only.
pub const ROUNDS: usize = 3;

/// Times `n_queries` failure predictions per method, cycling through
/// `queries`, and reports the mean wall-clock latency per query. Methods are
/// timed in interleaved rounds.
pub fn bench_inference(models: &[(String, BenchTarget)], queries: &[ContextFeatures], n_queries: usize) -> Result<Vec<BenchRow>> {
    if n_queries < MIN_QUERIES {
        return Err(invalid(format!("bench needs at least {MIN_QUERIES} queries, got {n_queries}")));
    }
    if queries.is_empty() || models.is_empty() {
        return Err(Error::Empty("bench needs models and query contexts".into()));
    }
    for (_, target) in models {
        for q in queries.iter().take(n_queries) {
            target.p_failure(q)?;
        }
    }
    let mut best = vec![f64::INFINITY; models.len()];
    for _ in 0..ROUNDS {
        for ((_, target), best) in models.iter().zip(best.iter_mut()) {
            let start = Instant::now();
            for i in 0..n_queries {
                black_box(target.p_failure(black_box(&queries[i % queries.len()]))?);
            }
            *best = best.min(start.elapsed().as_nanos() as f64 / n_queries as f64);
        }
    }
    Ok(models
        .iter()
        .zip(best)
        .map(|((name, target), ns)| BenchRow {
            method: name.clone(),
            passes: target.passes(),
            n_queries,
            mean_latency_ns: ns,
            working_set_bytes: target.working_set_bytes(),
        })
        .collect())
}

/// Benchmarks every depth failure predictor of one trained seed.
pub fn bench_depth_models(models: &DepthModels, alpha: f64, queries: &[ContextFeatures], n_queries: usize) -> Result<Vec<BenchRow>> {
    let targets = [
        ("ipr", BenchTarget::Introspector(&models.introspectors[..1])),
        ("ipr-ensemble", BenchTarget::Introspector(&models.introspectors)),
        ("ensemble", BenchTarget::Ensemble(&models.ensemble, alpha)),
        ("mcdropout", BenchTarget::Ensemble(&models.dropout, alpha)),
    ];
    let named: Vec<(String, BenchTarget)> = targets.into_iter().map(|(n, t)| (n.to_string(), t)).collect();
    bench_inference(&named, queries, n_queries)
}

/// Latency of `slow` divided by latency of `fast`.
pub fn latency_ratio(rows: &[BenchRow], fast: &str, slow: &str) -> Option<f64> {
    let get = |m: &str| rows.iter().find(|r| r.method == m).map(|r| r.mean_latency_ns);
    Some(get(slow)? / get(fast)?)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["method", "passes", "n_queries", "mean_latency_ns", "working_set_bytes"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
