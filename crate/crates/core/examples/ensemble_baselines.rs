//! Bootstrap ensemble and MC dropout on a toy regression with a noisy
//! region, before and after calibrating the member variance.

use ipercept::baselines::{build_ensemble, calibrate_sigma2, failure_prob, DepthEnsemble, EnsembleKind, EnsembleSpec, MC_DROPOUT_RATE};
use ipercept::introspect::{train_mlp, Mlp, OutputHead, TrainConfig};
use ipercept::rng::stream_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            let sigma = if x > 0.5 { 1.5 } else { 0.1 };
            (vec![x], (3.0 * x).sin() + Normal::new(0.0, sigma).unwrap().sample(&mut rng))
        })
        .unzip()
}

fn trainer(dropout: f64) -> impl Fn(&[Vec<f64>], &[f64], u64) -> ipercept::Result<Mlp> + Sync {
    move |xs, ts, seed| {
        let targets: Vec<Vec<f64>> = ts.iter().map(|t| vec![*t]).collect();
        let cfg = TrainConfig { epochs: 60, learning_rate: 0.02, dropout, seed, ..Default::default() };
        Ok(train_mlp(xs, &targets, OutputHead::Linear, &cfg)?.0)
    }
}

fn report(name: &str, e: &DepthEnsemble) {
    let sigmas: Vec<String> = [-0.8, 0.0, 0.8].iter().map(|x| format!("{:.3}", e.moments(&[*x]).1.sqrt())).collect();
    let p = failure_prob(e.moments(&[0.8]).1.sqrt(), 1.0);
    println!("{name:22} sigma2 {:.4}  sigma at -0.8/0/0.8: {}  p_fail(0.8) {p:.3}", e.sigma2, sigmas.join(" / "));
}

fn main() -> ipercept::Result<()> {
    let (xs, ts) = data(600, 1);
    let (cx, ct) = data(300, 2);
    let spec = EnsembleSpec::uncalibrated(5, 9);
    for (name, kind, dropout) in [("bootstrap", EnsembleKind::Bootstrap, 0.0), ("mc dropout", EnsembleKind::McDropout, MC_DROPOUT_RATE)] {
        let raw = build_ensemble(trainer(dropout), kind, &spec, &xs, &ts)?;
        let preds: Vec<Vec<f64>> = cx.iter().map(|x| raw.member_means(x)).collect();
        let calibrated = DepthEnsemble { sigma2: calibrate_sigma2(&preds, &ct)?, ..raw.clone() };
        report(&format!("{name} uncalibrated"), &raw);
        report(&format!("{name} calibrated"), &calibrated);
    }
    Ok(())
}
