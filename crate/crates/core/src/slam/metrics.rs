use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::stream_rng;
use crate::simworld::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpeResult {
    pub trans_err_pct: f64,
    pub rot_err_deg_per_m: f64,
    pub pairs: usize,
}

/// Relative pose error over frame pairs at least `d` metres apart along the
/// reference path. Each pair's errors are normalized by the pair's reference
/// path length; the result is the RMS over pairs.
pub fn rpe(estimated: &Trajectory, reference: &Trajectory, d: f64) -> Result<RpeResult> {
    if estimated.len() != reference.len() {
        return Err(invalid("trajectories must have the same number of poses"));
    }
    if !(d > 0.0) {
        return Err(invalid("pair distance must be positive"));
    }
    let cum = reference.cumulative_length();
    if cum.last().copied().unwrap_or(0.0) < d {
        return Err(invalid(format!("trajectory is shorter than {d} m")));
    }
    let (mut se_t, mut se_r, mut pairs) = (0.0, 0.0, 0);
    let mut j = 0;
    for i in 0..reference.len() {
        j = j.max(i + 1);
        while j < reference.len() && cum[j] - cum[i] < d {
            j += 1;
        }
        if j >= reference.len() {
            break;
        }
        let len = cum[j] - cum[i];
        let rel_ref = reference.pose(i).inverse().compose(reference.pose(j));
        let rel_est = estimated.pose(i).inverse().compose(estimated.pose(j));
        let err = rel_ref.inverse().compose(&rel_est);
        se_t += (err.translation.norm() / len * 100.0).powi(2);
        se_r += (err.angle().to_degrees() / len).powi(2);
        pairs += 1;
    }
    Ok(RpeResult {
        trans_err_pct: (se_t / pairs as f64).sqrt(),
        rot_err_deg_per_m: (se_r / pairs as f64).sqrt(),
        pairs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mdbf {
    pub meters: f64,
    /// No failure occurred; `meters` is then a lower bound (the path length).
    pub no_failures: bool,
}

pub fn mdbf(failure_events: &[usize], reference: &Trajectory) -> Mdbf {
    let len = reference.path_length();
    Mdbf {
        meters: len / (failure_events.len() + 1) as f64,
        no_failures: failure_events.is_empty(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SortingCurves {
    /// Fraction of features kept, in percent (1..=100).
    pub percent: Vec<f64>,
    pub ideal: Vec<f64>,
    pub predicted: Vec<f64>,
    pub random: Vec<f64>,
    pub random_std: Vec<f64>,
}

fn area(curve: &[f64]) -> f64 {
    curve.iter().sum::<f64>() / curve.len().max(1) as f64
}

impl SortingCurves {
    pub fn area_ideal(&self) -> f64 {
        area(&self.ideal)
    }

    pub fn area_predicted(&self) -> f64 {
        area(&self.predicted)
    }

    pub fn area_random(&self) -> f64 {
        area(&self.random)
    }
}

fn cumulative_at_levels(magnitudes: &[f64], order: &[usize]) -> Vec<f64> {
    let n = order.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &i in order {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + magnitudes[i]);
    }
    (1..=100)
        .map(|pct| {
            let k = ((pct * n) as f64 / 100.0).ceil().max(1.0) as usize;
            prefix[k] / k as f64
        })
        .collect()
}

/// Mean true error magnitude of the top-x% features when features are ranked
/// best-first by true error (ideal), by predicted cost, and at random.
pub fn sorting_curve(scored: &[(f64, f64)], trials: usize, seed: u64) -> Result<SortingCurves> {
    if scored.len() < 10 {
        return Err(invalid("sorting curves need at least 10 features"));
    }
    let mags: Vec<f64> = scored.iter().map(|s| s.1).collect();
    let mut by_truth: Vec<usize> = (0..scored.len()).collect();
    by_truth.sort_by(|&a, &b| scored[a].1.total_cmp(&scored[b].1).then(a.cmp(&b)));
    let mut by_pred: Vec<usize> = (0..scored.len()).collect();
    by_pred.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0).then(a.cmp(&b)));

    let mut rng = stream_rng(seed, 0x736f7274);
    let mut sum = vec![0.0; 100];
    let mut sum_sq = vec![0.0; 100];
    let mut order: Vec<usize> = (0..scored.len()).collect();
    for _ in 0..trials {
        order.shuffle(&mut rng);
        for (k, v) in cumulative_at_levels(&mags, &order).into_iter().enumerate() {
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    let t = trials.max(1) as f64;
    let random: Vec<f64> = sum.iter().map(|s| s / t).collect();
    let random_std = sum_sq
        .iter()
        .zip(&random)
        .map(|(sq, m)| (sq / t - m * m).max(0.0).sqrt())
        .collect();
    Ok(SortingCurves {
        percent: (1..=100).map(f64::from).collect(),
        ideal: cumulative_at_levels(&mags, &by_truth),
        predicted: cumulative_at_levels(&mags, &by_pred),
        random,
        random_std,
    })
}
