//! Ensemble and Monte-Carlo-dropout uncertainty baselines built around a
//! small depth-correction network.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::introspect::{Dropout, Mlp};
use crate::rng::{mix_seed, stream_rng};
use crate::stats::erf;

/// Member output variance used when the ensemble is not calibrated.
pub const UNCALIBRATED_SIGMA2: f64 = 1e-4;
pub const MC_DROPOUT_RATE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleKind {
    /// Independently trained members on bootstrap resamples.
    Bootstrap,
    /// One network evaluated under random dropout masks.
    McDropout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_members: usize,
    pub member_sigma2: f64,
    pub perturb_seed: u64,
    pub calibrated: bool,
}

impl EnsembleSpec {
    pub fn uncalibrated(n_members: usize, perturb_seed: u64) -> Self {
        Self { n_members, member_sigma2: UNCALIBRATED_SIGMA2, perturb_seed, calibrated: false }
    }
}

/// Mean and variance of the equal-weight Gaussian mixture with component
/// means `member_means` and shared variance `sigma2`.
pub fn ensemble_moments(member_means: &[f64], sigma2: f64) -> Result<(f64, f64)> {
    if member_means.is_empty() {
        return Err(Error::Empty("ensemble has no members".into()));
    }
    let n = member_means.len() as f64;
    let mu = member_means.iter().sum::<f64>() / n;
    let second = member_means.iter().map(|m| sigma2 + m * m).sum::<f64>() / n;
    // Guard against cancellation pushing the spread term below zero.
    let spread = (second - sigma2 - mu * mu).max(0.0);
    Ok((mu, sigma2 + spread))
}

/// `P(|e| > τ)` for `e ~ N(0, σ_ens²)`.
pub fn failure_prob(sigma_ens: f64, failure_threshold: f64) -> f64 {
    if sigma_ens <= 0.0 {
        return 0.0;
    }
    1.0 - erf(failure_threshold / (SQRT_2 * sigma_ens))
}

/// A set of depth predictors whose outputs form a uniform mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEnsemble {
    pub kind: EnsembleKind,
    pub members: Vec<Mlp>,
    pub n_members: usize,
    pub sigma2: f64,
    pub seed: u64,
}

fn input_hash(x: &[f64]) -> u64 {
    x.iter().fold(0x9e37_79b9_7f4a_7c15, |h, v| mix_seed(h, v.to_bits()))
}

impl DepthEnsemble {
    /// Per-member predictions for input `x`. Dropout masks are seeded from
    /// the member index and the input, so results do not depend on query order.
    pub fn member_means(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            EnsembleKind::Bootstrap => self.members.iter().map(|m| m.forward(x)[0]).collect(),
            EnsembleKind::McDropout => {
                let h = input_hash(x);
                (0..self.n_members)
                    .map(|i| {
                        let mut rng = stream_rng(mix_seed(self.seed, i as u64), h);
                        self.members[0].forward_dropout(x, Dropout { rate: MC_DROPOUT_RATE }, &mut rng)[0]
                    })
                    .collect()
            }
        }
    }

    pub fn moments(&self, x: &[f64]) -> (f64, f64) {
        ensemble_moments(&self.member_means(x), self.sigma2).expect("ensemble has members")
    }
}

/// Trains `spec.n_members` predictors. Bootstrap members are trained in
/// parallel on resamples with distinct seeds; MC dropout trains one network.
pub fn build_ensemble<F>(
    trainer: F,
    kind: EnsembleKind,
    spec: &EnsembleSpec,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<DepthEnsemble>
where
    F: Fn(&[Vec<f64>], &[f64], u64) -> Result<Mlp> + Sync,
{
    if spec.n_members == 0 {
        return Err(invalid("an ensemble needs at least one member"));
    }
    if !(spec.member_sigma2 > 0.0) {
        return Err(invalid("member variance must be positive"));
    }
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(invalid("training inputs and targets must be nonempty and equally long"));
    }
    let members = match kind {
        EnsembleKind::McDropout => vec![trainer(inputs, targets, spec.perturb_seed)?],
        EnsembleKind::Bootstrap => (0..spec.n_members)
            .into_par_iter()
            .map(|i| {
                let seed = mix_seed(spec.perturb_seed, i as u64);
                if spec.n_members == 1 {
                    return trainer(inputs, targets, seed);
                }
                let mut rng = stream_rng(seed, 0x626f6f74);
                let idx: Vec<usize> = (0..inputs.len()).map(|_| rand::Rng::random_range(&mut rng, 0..inputs.len())).collect();
                let xs: Vec<Vec<f64>> = idx.iter().map(|&j| inputs[j].clone()).collect();
                let ts: Vec<f64> = idx.iter().map(|&j| targets[j]).collect();
                trainer(&xs, &ts, seed)
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(DepthEnsemble { kind, members, n_members: spec.n_members, sigma2: spec.member_sigma2, seed: spec.perturb_seed })
}

/// Mean negative log likelihood of `labels` under the uniform Gaussian
/// mixtures centred on each row of `member_preds`.
pub fn mixture_nll(member_preds: &[Vec<f64>], labels: &[f64], sigma2: f64) -> f64 {
    let norm = -0.5 * (2.0 * PI * sigma2).ln();
    let total: f64 = member_preds
        .iter()
        .zip(labels)
        .map(|(mus, y)| {
            let logs: Vec<f64> = mus.iter().map(|m| norm - (y - m).powi(2) / (2.0 * sigma2)).collect();
            let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + (logs.iter().map(|l| (l - mx).exp()).sum::<f64>() / mus.len() as f64).ln();
            -lse
        })
        .sum();
    total / labels.len() as f64
}

pub const LOG_SIGMA2_RANGE: (f64, f64) = (-6.0, 2.0);

/// Shared member variance minimizing the mixture NLL, by golden-section
/// search over `ln σ²` in [`LOG_SIGMA2_RANGE`].
pub fn calibrate_sigma2(member_preds: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
    if labels.is_empty() || member_preds.len() != labels.len() || member_preds.iter().any(|m| m.is_empty()) {
        return Err(invalid("calibration needs one nonempty prediction set per label"));
    }
    let f = |ls: f64| mixture_nll(member_preds, labels, ls.exp());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LOG_SIGMA2_RANGE;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    Ok((0.5 * (a + b)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::introspect::{train_mlp, OutputHead, TrainConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn moment_examples() {
        assert_eq!(ensemble_moments(&[3.0], 0.25).unwrap(), (3.0, 0.25));
        let (m, v) = ensemble_moments(&[1.0, 3.0], 0.25).unwrap();
        assert!((m - 2.0).abs() < 1e-15 && (v - 1.25).abs() < 1e-12);
        assert!(ensemble_moments(&[], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn mixture_variance_dominates(mus in prop::collection::vec(-100.0f64..100.0, 1..10), s2 in 1e-6f64..10.0) {
            let (_, v) = ensemble_moments(&mus, s2).unwrap();
            prop_assert!(v >= s2 - 1e-12);
        }

        #[test]
        fn failure_prob_monotone(a in 0.01f64..10.0, b in 0.01f64..10.0) {
            let (pa, pb) = (failure_prob(a, 1.0), failure_prob(b, 1.0));
            prop_assert!((0.0..1.0).contains(&pa));
            if a < b { prop_assert!(pa <= pb); }
        }
    }

    #[test]
    fn moments_match_monte_carlo() {
        let mus = [-1.0, 0.5, 2.0];
        let s2 = 0.3;
        let (m, v) = ensemble_moments(&mus, s2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, s2.sqrt()).unwrap();
        let draws: Vec<f64> = (0..1_000_000).map(|_| mus[rng.random_range(0..3)] + n.sample(&mut rng)).collect();
        let mc_m = draws.iter().sum::<f64>() / draws.len() as f64;
        let mc_v = draws.iter().map(|x| (x - mc_m).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((m - mc_m).abs() < 1e-2 && (v - mc_v).abs() < 1e-2);
    }

    #[test]
    fn failure_prob_values() {
        assert!(failure_prob(1e-6, 1.0) < 1e-12);
        assert!((failure_prob(1.0, 1.0) - 0.3173).abs() < 1e-3);
        assert!(failure_prob(1e6, 1.0) > 0.999);
    }

    fn trainer(epochs: usize) -> impl Fn(&[Vec<f64>], &[f64], u64) -> Result<Mlp> + Sync {
        move |x: &[Vec<f64>], t: &[f64], seed: u64| {
            let ts: Vec<Vec<f64>> = t.iter().map(|v| vec![*v]).collect();
            let cfg = TrainConfig { epochs, seed, learning_rate: 0.02, dropout: 0.2, ..Default::default() };
            Ok(train_mlp(x, &ts, OutputHead::Linear, &cfg)?.0)
        }
    }

    fn linear_data(seed: u64, noise: f64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nn = Normal::new(0.0, noise.max(1e-12)).unwrap();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let ts = xs.iter().map(|x| x[0] - 0.5 * x[1] + if noise > 0.0 { nn.sample(&mut rng) } else { 0.0 }).collect();
        (xs, ts)
    }

    #[test]
    fn single_member_equals_model_and_seeds_differ() {
        let (xs, ts) = linear_data(1, 0.1, 200);
        let spec = EnsembleSpec::uncalibrated(1, 5);
        let e = build_ensemble(trainer(5), EnsembleKind::Bootstrap, &spec, &xs, &ts).unwrap();
        let single = trainer(5)(&xs, &ts, mix_seed(5, 0)).unwrap();
        assert_eq!(e.member_means(&xs[0]), vec![single.forward(&xs[0])[0]]);
        let e2 = build_ensemble(trainer(5), EnsembleKind::Bootstrap, &EnsembleSpec::uncalibrated(2, 5), &xs, &ts).unwrap();
        assert_ne!(e2.members[0], e2.members[1]);
    }

    #[test]
    fn mc_dropout_is_order_independent() {
        let (xs, ts) = linear_data(1, 0.1, 200);
        let e = build_ensemble(trainer(5), EnsembleKind::McDropout, &EnsembleSpec::uncalibrated(5, 3), &xs, &ts).unwrap();
        let a = e.member_means(&xs[3]);
        let _ = e.member_means(&xs[4]);
        assert_eq!(a, e.member_means(&xs[3]));
        assert!(a.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn spread_grows_with_label_noise() {
        let spread = |noise: f64, seed: u64| {
            let (xs, ts) = linear_data(seed, noise, 150);
            let e = build_ensemble(trainer(30), EnsembleKind::Bootstrap, &EnsembleSpec::uncalibrated(4, seed), &xs, &ts).unwrap();
            xs.iter().take(50).map(|x| e.moments(x).1).sum::<f64>() / 50.0
        };
        let (mut lo, mut hi) = (0.0, 0.0);
        for seed in 0..10 {
            lo += spread(0.0, seed);
            hi += spread(0.5, seed);
        }
        assert!(hi > lo, "{hi} vs {lo}");
    }

    fn mixture_samples(s2: f64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let nn = Normal::new(0.0, s2.sqrt()).unwrap();
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let mus: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            labels.push(mus[rng.random_range(0..3)] + nn.sample(&mut rng));
            preds.push(mus);
        }
        (preds, labels)
    }

    #[test]
    fn calibration_recovers_variance() {
        let (preds, labels) = mixture_samples(0.09, 10_000);
        let s2 = calibrate_sigma2(&preds, &labels).unwrap();
        assert!((0.07..=0.11).contains(&s2), "{s2}");
        let at = mixture_nll(&preds, &labels, s2);
        assert!(at <= mixture_nll(&preds, &labels, 10.0 * s2));
        assert!(at <= mixture_nll(&preds, &labels, 0.1 * s2));
        assert!(at <= mixture_nll(&preds, &labels, UNCALIBRATED_SIGMA2));
    }

    #[test]
    fn calibration_single_member_is_sample_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = Normal::new(0.0, 0.6).unwrap();
        let labels: Vec<f64> = (0..5000).map(|_| n.sample(&mut rng)).collect();
        let preds = vec![vec![0.0]; labels.len()];
        let s2 = calibrate_sigma2(&preds, &labels).unwrap();
        let var = labels.iter().map(|x| x * x).sum::<f64>() / labels.len() as f64;
        assert!((s2 / var - 1.0).abs() < 0.1);
    }
}
