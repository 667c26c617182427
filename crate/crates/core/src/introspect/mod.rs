//! The introspection function: learned maps from observation context to
//! perception-error statistics, plus the derived robust-loss parameter,
//! error distributions, NLL scoring and failure clustering.

mod cluster;
pub mod mlp;

use serde::{Deserialize, Serialize};

pub use cluster::{cluster_failures, cluster_purity, Clustering};
pub use mlp::{train_mlp, write_loss_history_csv, Dropout, LossRecord, Mlp, OutputHead, TrainConfig};

use crate::domain::{ContextFeatures, FailureLabel, ParametricErrorDist, RegionClass};
use crate::error::{invalid, Error, Result};

/// Lowest density used when scoring a sample with zero likelihood.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Per-region-class empirical output (mean cost or class frequencies).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedModel {
    pub bins: Vec<Vec<f64>>,
}

impl BinnedModel {
    /// Averages the target vectors per region class; empty bins fall back to
    /// the global average.
    pub fn fit(contexts: &[ContextFeatures], targets: &[Vec<f64>]) -> Result<Self> {
        if contexts.is_empty() {
            return Err(Error::Empty("binned training set".into()));
        }
        let d = targets[0].len();
        let mut sums = vec![vec![0.0; d]; RegionClass::ALL.len()];
        let mut counts = vec![0usize; RegionClass::ALL.len()];
        let mut global = vec![0.0; d];
        for (c, t) in contexts.iter().zip(targets) {
            let b = c.region().map_or(0, |r| r.index());
            counts[b] += 1;
            sums[b].iter_mut().zip(t).for_each(|(s, v)| *s += v);
            global.iter_mut().zip(t).for_each(|(s, v)| *s += v);
        }
        global.iter_mut().for_each(|g| *g /= contexts.len() as f64);
        let bins = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| if n == 0 { global.clone() } else { s.iter().map(|v| v / n as f64).collect() })
            .collect();
        Ok(Self { bins })
    }

    pub fn predict(&self, context: &ContextFeatures) -> Vec<f64> {
        self.bins[context.region().map_or(0, |r| r.index())].clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum IntrospectionModel {
    /// Predicts a normalized error magnitude in [0, 1].
    Regressor(Mlp),
    /// Predicts probabilities over FP, FN, TP, TN (in that order).
    Classifier(Mlp),
    Binned(BinnedModel),
}

impl IntrospectionModel {
    pub fn predict(&self, context: &ContextFeatures) -> Vec<f64> {
        match self {
            IntrospectionModel::Regressor(m) | IntrospectionModel::Classifier(m) => m.forward(context.as_slice()),
            IntrospectionModel::Binned(b) => b.predict(context),
        }
    }

    /// Predicted normalized cost; requires a single-output model.
    pub fn cost(&self, context: &ContextFeatures) -> Result<f64> {
        match self.predict(context).as_slice() {
            [c] => Ok(*c),
            other => Err(Error::DimensionMismatch { expected: 1, got: other.len() }),
        }
    }

    /// Class probabilities ordered as FP, FN, TP, TN.
    pub fn class_probs(&self, context: &ContextFeatures) -> Result<[f64; 4]> {
        let p = self.predict(context);
        p.as_slice()
            .try_into()
            .map_err(|_| Error::DimensionMismatch { expected: 4, got: p.len() })
    }

    /// Probability that the depth error exceeds the failure threshold.
    pub fn p_failure(&self, context: &ContextFeatures) -> Result<f64> {
        let p = self.class_probs(context)?;
        Ok(p[FailureLabel::Fp.index()] + p[FailureLabel::Fn.index()])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: IntrospectionModel = serde_json::from_str(s)?;
        if let IntrospectionModel::Regressor(n) | IntrospectionModel::Classifier(n) = &m {
            Mlp::from_json(&serde_json::to_string(n)?)?;
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: IntrospectionModel,
    pub history: Vec<LossRecord>,
}

pub fn normalize_error(magnitude: f64, e_max: f64) -> Result<f64> {
    if !(magnitude >= 0.0) || !(e_max > 0.0) {
        return Err(invalid("magnitude must be nonnegative and e_max positive"));
    }
    Ok(magnitude.min(e_max) / e_max)
}

/// Training example for the regressor: a context, its normalized cost-map
/// target and whether the cost-map cell was confident enough to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionExample {
    pub context: ContextFeatures,
    pub target: f64,
    pub masked_in: bool,
}

pub fn train_regressor(examples: &[RegressionExample], cfg: &TrainConfig) -> Result<TrainedModel> {
    let used: Vec<&RegressionExample> = examples.iter().filter(|e| e.masked_in).collect();
    if used.is_empty() {
        return Err(Error::Empty("no masked-in training targets".into()));
    }
    if used.iter().any(|e| !(0.0..=1.0).contains(&e.target)) {
        return Err(invalid("regression targets must lie in [0, 1]"));
    }
    let xs: Vec<Vec<f64>> = used.iter().map(|e| e.context.as_slice().to_vec()).collect();
    let ts: Vec<Vec<f64>> = used.iter().map(|e| vec![e.target]).collect();
    let (mlp, history) = train_mlp(&xs, &ts, OutputHead::Sigmoid, cfg)?;
    Ok(TrainedModel { model: IntrospectionModel::Regressor(mlp), history })
}

pub fn one_hot(label: FailureLabel) -> Vec<f64> {
    let mut t = vec![0.0; 4];
    t[label.index()] = 1.0;
    t
}

pub fn train_classifier(examples: &[(ContextFeatures, FailureLabel)], cfg: &TrainConfig) -> Result<TrainedModel> {
    if examples.is_empty() {
        return Err(Error::Empty("classifier training set".into()));
    }
    let xs: Vec<Vec<f64>> = examples.iter().map(|(c, _)| c.as_slice().to_vec()).collect();
    let ts: Vec<Vec<f64>> = examples.iter().map(|(_, l)| one_hot(*l)).collect();
    let (mlp, history) = train_mlp(&xs, &ts, OutputHead::Softmax, cfg)?;
    Ok(TrainedModel { model: IntrospectionModel::Classifier(mlp), history })
}

/// Huber parameter for a normalized cost: `θ = (1 - c) / (1 + c) · θ_max`.
pub fn theta_from_cost(c: f64, theta_max: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return Err(invalid(format!("cost {c} outside [0, 1]")));
    }
    Ok((1.0 - c) / (1.0 + c) * theta_max)
}

pub fn piecewise_from_probs(
    p_fp: f64,
    p_fn: f64,
    p_tp: f64,
    p_tn: f64,
    alpha: f64,
    r_max: f64,
) -> Result<ParametricErrorDist> {
    let p = [p_fp, p_fn, p_tp, p_tn];
    if p.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("probabilities must be nonnegative"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("probabilities sum to {s}, not 1")));
    }
    if !(alpha > 0.0 && r_max > alpha) {
        return Err(invalid("piecewise support requires 0 < alpha < r_max"));
    }
    let [p_fp, p_fn, p_tp, p_tn] = p.map(|v| v / s);
    ParametricErrorDist::piecewise(
        p_fp / (r_max - alpha),
        (p_tp + p_tn) / (2.0 * alpha),
        p_fn / (r_max - alpha),
        alpha,
        r_max,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NllScore {
    pub nll: f64,
    /// Samples whose density fell below the floor.
    pub floored: usize,
}

/// Mean negative log density of `samples` under `dist`.
pub fn nll<S: AsRef<[f64]>>(dist: &ParametricErrorDist, samples: &[S]) -> Result<NllScore> {
    if samples.is_empty() {
        return Err(Error::Empty("NLL samples".into()));
    }
    let mut total = 0.0;
    let mut floored = 0;
    for s in samples {
        let p = dist.pdf(s.as_ref())?;
        if p < DENSITY_FLOOR {
            floored += 1;
        }
        total -= p.max(DENSITY_FLOOR).ln();
    }
    Ok(NllScore { nll: total / samples.len() as f64, floored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::layout;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(region: RegionClass, rng: &mut ChaCha8Rng) -> ContextFeatures {
        let mut v = vec![0.0; layout::DIM];
        v[region.index()] = 1.0;
        v[layout::TEXTURE] = rng.random();
        v[layout::BRIGHTNESS] = rng.random();
        v[layout::U_NORM] = rng.random();
        v[layout::V_NORM] = rng.random();
        v[layout::INV_DEPTH] = rng.random_range(0.05..1.0);
        ContextFeatures::new(v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_error(0.0, 10.0).unwrap(), 0.0);
        assert_eq!(normalize_error(10.0, 10.0).unwrap(), 1.0);
        assert_eq!(normalize_error(25.0, 10.0).unwrap(), 1.0);
        assert_eq!(normalize_error(2.5, 10.0).unwrap(), 0.25);
        assert!(normalize_error(-1.0, 10.0).is_err());
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta_from_cost(0.0, 5.99).unwrap(), 5.99);
        assert_eq!(theta_from_cost(1.0, 5.99).unwrap(), 0.0);
        assert!((theta_from_cost(0.5, 6.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(theta_from_cost(1.5, 6.0).is_err());
    }

    proptest! {
        #[test]
        fn theta_monotone_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0, tm in 0.1f64..20.0) {
            let (ta, tb) = (theta_from_cost(a, tm).unwrap(), theta_from_cost(b, tm).unwrap());
            prop_assert!((0.0..=tm).contains(&ta));
            if a < b { prop_assert!(ta > tb); }
        }

        #[test]
        fn piecewise_from_probs_normalized(w in prop::array::uniform4(0.0f64..1.0), alpha in 0.1f64..3.0, extra in 0.1f64..20.0) {
            let s: f64 = w.iter().sum();
            prop_assume!(s > 1e-3);
            let p = w.map(|v| v / s);
            let d = piecewise_from_probs(p[0], p[1], p[2], p[3], alpha, alpha + extra).unwrap();
            prop_assert!((d.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn piecewise_examples() {
        let d = piecewise_from_probs(0.0, 0.0, 0.5, 0.5, 1.0, 10.0).unwrap();
        assert_eq!(
            d,
            ParametricErrorDist::Piecewise { theta_fp: 0.0, theta_t: 0.5, theta_fn: 0.0, alpha: 1.0, r_max: 10.0 }
        );
        let ParametricErrorDist::Piecewise { theta_fp, theta_t, theta_fn, .. } =
            piecewise_from_probs(0.25, 0.25, 0.25, 0.25, 1.0, 10.0).unwrap()
        else {
            unreachable!()
        };
        assert!((theta_fp - 0.25 / 9.0).abs() < 1e-15 && (theta_fn - 0.25 / 9.0).abs() < 1e-15);
        assert!((theta_t - 0.25).abs() < 1e-15);
        assert!(piecewise_from_probs(0.5, 0.5, 0.5, 0.0, 1.0, 10.0).is_err());
    }

    #[test]
    fn nll_examples() {
        let g = ParametricErrorDist::Gaussian { mean: 0.0, sigma: 1.0 };
        assert!((nll(&g, &[[0.0]]).unwrap().nll - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        let pw = piecewise_from_probs(0.0, 0.0, 1.0, 0.0, 1.0, 10.0).unwrap();
        assert!((nll(&pw, &[[0.3]]).unwrap().nll - 2f64.ln()).abs() < 1e-12);
        let s = nll(&pw, &[[5.0]]).unwrap();
        assert_eq!(s.floored, 1);
        assert!((s.nll + DENSITY_FLOOR.ln()).abs() < 1e-9);
        assert!(nll(&pw, &[[10.0]]).is_err());
    }

    #[test]
    fn nll_prefers_matched_distribution() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Normal::new(0.0, 0.5).unwrap();
        let xs: Vec<[f64; 1]> = (0..10_000).map(|_| [n.sample(&mut rng)]).collect();
        let matched = nll(&ParametricErrorDist::Gaussian { mean: 0.0, sigma: 0.5 }, &xs).unwrap().nll;
        let wide = nll(&ParametricErrorDist::Gaussian { mean: 0.0, sigma: 2.0 }, &xs).unwrap().nll;
        let narrow = nll(&ParametricErrorDist::Gaussian { mean: 0.0, sigma: 0.2 }, &xs).unwrap().nll;
        assert!(matched < wide && matched < narrow);
    }

    #[test]
    fn regressor_fits_constant_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex: Vec<RegressionExample> = (0..300)
            .map(|i| RegressionExample {
                context: ctx(RegionClass::ALL[i % 4], &mut rng),
                target: 0.3,
                masked_in: true,
            })
            .collect();
        let m = train_regressor(&ex, &TrainConfig::default()).unwrap();
        for e in &ex {
            let c = m.model.cost(&e.context).unwrap();
            assert!((0.25..=0.35).contains(&c), "{c}");
        }
    }

    #[test]
    fn regressor_rejects_all_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = vec![RegressionExample { context: ctx(RegionClass::Clean, &mut rng), target: 0.1, masked_in: false }];
        assert!(matches!(train_regressor(&ex, &TrainConfig::default()), Err(Error::Empty(_))));
    }

    fn planted(rng: &mut ChaCha8Rng, n: usize, shuffle: bool) -> Vec<RegressionExample> {
        let mut ex: Vec<RegressionExample> = (0..n)
            .map(|i| {
                let shadow = i % 2 == 0;
                let r = if shadow { RegionClass::Shadow } else { RegionClass::Clean };
                let base = if shadow { 0.8 } else { 0.1 };
                RegressionExample {
                    context: ctx(r, rng),
                    target: (base + rng.random_range(-0.05..0.05f64)).clamp(0.0, 1.0),
                    masked_in: true,
                }
            })
            .collect();
        if shuffle {
            use rand::seq::SliceRandom;
            let mut t: Vec<f64> = ex.iter().map(|e| e.target).collect();
            t.shuffle(rng);
            ex.iter_mut().zip(t).for_each(|(e, t)| e.target = t);
        }
        ex
    }

    fn mse(m: &IntrospectionModel, ex: &[RegressionExample]) -> f64 {
        ex.iter().map(|e| (m.cost(&e.context).unwrap() - e.target).powi(2)).sum::<f64>() / ex.len() as f64
    }

    fn target_var(ex: &[RegressionExample]) -> f64 {
        let t: Vec<f64> = ex.iter().map(|e| e.target).collect();
        crate::stats::pop_variance(&t)
    }

    #[test]
    fn regressor_recovers_planted_gap_and_beats_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = planted(&mut rng, 600, false);
        let test = planted(&mut rng, 400, false);
        let m = train_regressor(&train, &TrainConfig::default()).unwrap();
        let mean_of = |r: RegionClass| {
            let v: Vec<f64> = test
                .iter()
                .filter(|e| e.context.region() == Some(r))
                .map(|e| m.model.cost(&e.context).unwrap())
                .collect();
            crate::stats::mean(&v)
        };
        assert!(mean_of(RegionClass::Shadow) - mean_of(RegionClass::Clean) >= 0.4);
        assert!(mse(&m.model, &test) < target_var(&test));
    }

    #[test]
    fn regressor_null_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let train = planted(&mut rng, 600, true);
        let m = train_regressor(&train, &TrainConfig::default()).unwrap();
        let val = m.history.iter().map(|h| h.val).fold(f64::INFINITY, f64::min);
        let var = target_var(&train);
        assert!((val - var).abs() <= 0.2 * var, "val {val} var {var}");
    }

    #[test]
    fn classifier_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let single: Vec<_> = (0..200).map(|i| (ctx(RegionClass::ALL[i % 4], &mut rng), FailureLabel::Tp)).collect();
        let m = train_classifier(&single, &TrainConfig::default()).unwrap();
        for (c, _) in &single {
            let p = m.model.class_probs(c).unwrap();
            assert!(p[FailureLabel::Tp.index()] >= 0.95);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        let gen = |rng: &mut ChaCha8Rng, n: usize| -> Vec<(ContextFeatures, FailureLabel)> {
            (0..n)
                .map(|i| {
                    let r = RegionClass::ALL[i % 4];
                    let l = if r == RegionClass::Reflection { FailureLabel::Fp } else { FailureLabel::Tp };
                    (ctx(r, rng), l)
                })
                .collect()
        };
        let train = gen(&mut rng, 800);
        let test = gen(&mut rng, 400);
        let m = train_classifier(&train, &TrainConfig::default()).unwrap();
        let fp_cases: Vec<_> = test.iter().filter(|(_, l)| *l == FailureLabel::Fp).collect();
        let hits = fp_cases
            .iter()
            .filter(|(c, _)| {
                let p = m.model.class_probs(c).unwrap();
                (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])) == Some(FailureLabel::Fp.index())
            })
            .count();
        assert!(hits as f64 / fp_cases.len() as f64 >= 0.8);
    }

    #[test]
    fn classifier_null_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut gen = |n: usize| -> Vec<(ContextFeatures, FailureLabel)> {
            (0..n)
                .map(|i| (ctx(RegionClass::ALL[i % 4], &mut rng), FailureLabel::ALL[rng.random_range(0..4)]))
                .collect()
        };
        let train = gen(1000);
        let test = gen(1000);
        let m = train_classifier(&train, &TrainConfig { epochs: 20, ..Default::default() }).unwrap();
        let acc = test
            .iter()
            .filter(|(c, l)| {
                let p = m.model.class_probs(c).unwrap();
                (0..4).max_by(|&a, &b| p[a].total_cmp(&p[b])) == Some(l.index())
            })
            .count() as f64
            / test.len() as f64;
        assert!((acc - 0.25).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn training_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex = planted(&mut rng, 200, false);
        let cfg = TrainConfig { epochs: 5, seed: 77, ..Default::default() };
        let a = train_regressor(&ex, &cfg).unwrap();
        let b = train_regressor(&ex, &cfg).unwrap();
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        let back = IntrospectionModel::from_json(&a.model.to_json().unwrap()).unwrap();
        assert_eq!(back, a.model);
    }

    #[test]
    fn binned_model_averages_per_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ex = planted(&mut rng, 200, false);
        let ctxs: Vec<_> = ex.iter().map(|e| e.context.clone()).collect();
        let ts: Vec<_> = ex.iter().map(|e| vec![e.target]).collect();
        let m = IntrospectionModel::Binned(BinnedModel::fit(&ctxs, &ts).unwrap());
        let shadow = ex.iter().find(|e| e.context.region() == Some(RegionClass::Shadow)).unwrap();
        assert!((m.cost(&shadow.context).unwrap() - 0.8).abs() < 0.02);
    }
}
