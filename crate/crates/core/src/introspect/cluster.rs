use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;

const MAX_ITERS: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// Picks an index with probability proportional to `weights`; uniform when
/// all weights vanish.
fn weighted_pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let mut r = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// k-means with k-means++ seeding and Lloyd iterations. An empty cluster is
/// re-seeded at the point farthest from its current centroid.
pub fn cluster_failures<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if points.is_empty() {
        return Err(Error::Empty("clustering input".into()));
    }
    if k > points.len() {
        return Err(invalid(format!("k = {k} exceeds the {} points", points.len())));
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(invalid("points have differing dimensions"));
    }
    let mut rng = stream_rng(seed, 0x6b6d65616e73);
    let pts: Vec<&[f64]> = points.iter().map(|p| p.as_ref()).collect();

    let mut centroids = vec![pts[rng.random_range(0..pts.len())].to_vec()];
    let mut d2: Vec<f64> = pts.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let c = pts[weighted_pick(&d2, &mut rng)].to_vec();
        d2.iter_mut().zip(&pts).for_each(|(d, p)| *d = d.min(dist2(p, &c)));
        centroids.push(c);
    }

    let mut assignments = vec![0; pts.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        for (a, p) in assignments.iter_mut().zip(&pts) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(&pts) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let new_c = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                let far = (0..pts.len())
                    .max_by(|&a, &b| {
                        let da = dist2(pts[a], &centroids[assignments[a]]);
                        let db = dist2(pts[b], &centroids[assignments[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("points nonempty");
                assignments[far] = j;
                pts[far].to_vec()
            };
            shift = shift.max(dist2(&new_c, &centroids[j]).sqrt());
            centroids[j] = new_c;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    for (a, p) in assignments.iter_mut().zip(&pts) {
        *a = nearest(p, &centroids).0;
    }
    Ok(Clustering {
        assignments,
        centroids,
        iterations,
    })
}

/// Fraction of points whose cluster's majority true label matches their own.
pub fn cluster_purity(assignments: &[usize], truth: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut table: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (a, t) in assignments.iter().zip(truth) {
        *table.entry(*a).or_default().entry(*t).or_default() += 1;
    }
    let majority: usize = table.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    majority as f64 / assignments.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let c = cluster_failures(&pts, 1, 0).unwrap();
        assert!((c.centroids[0][0] - 3.0).abs() < 1e-12 && (c.centroids[0][1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        let pts = vec![vec![1.0]];
        assert!(cluster_failures(&pts, 2, 0).is_err());
        assert!(cluster_failures(&pts, 0, 0).is_err());
    }

    #[test]
    fn duplicates_converge() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
        let c = cluster_failures(&pts, 2, 4).unwrap();
        assert!(c.centroids.iter().all(|v| v[0].is_finite()));
        assert_eq!(cluster_purity(&c.assignments, &[0, 0, 0, 1, 1]), 1.0);
        let all_same = vec![vec![2.0]; 6];
        let c = cluster_failures(&all_same, 3, 1).unwrap();
        assert!(c.centroids.iter().all(|v| v[0] == 2.0));
    }

    #[test]
    fn recovers_separated_clusters() {
        for seed in 0..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = Normal::new(0.0, 0.3).unwrap();
            let mut pts = Vec::new();
            let mut truth = Vec::new();
            for (label, centre) in [(0usize, [0.0, 0.0, 0.0]), (1, [3.0, 3.0, -1.0])] {
                for _ in 0..100 {
                    pts.push(centre.iter().map(|c| c + n.sample(&mut rng)).collect::<Vec<f64>>());
                    truth.push(label);
                }
            }
            let c = cluster_failures(&pts, 2, seed).unwrap();
            assert!(cluster_purity(&c.assignments, &truth) >= 0.95);
            assert_eq!(c, cluster_failures(&pts, 2, seed).unwrap());
        }
    }
}
