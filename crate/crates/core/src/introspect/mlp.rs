//! Small fully-connected network with tanh hidden layers, trained by
//! mini-batch SGD with momentum.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::stream_rng;

pub const HIDDEN: [usize; 2] = [16, 16];
const MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputHead {
    /// Identity output, squared-error loss.
    Linear,
    /// Logistic output in (0, 1), squared-error loss.
    Sigmoid,
    /// Softmax over the outputs, cross-entropy loss.
    Softmax,
}

/// Row-major `n_out × n_in` weight matrix and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        Self {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.n_in).zip(&self.bias).map(|(row, b)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

/// Feed-forward network with per-feature input standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub head: OutputHead,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
}

/// Hidden-unit dropout applied at prediction or training time.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
}

impl Mlp {
    pub fn new(n_in: usize, n_out: usize, head: OutputHead, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 0x6d6c70);
        let sizes = [n_in, HIDDEN[0], HIDDEN[1], n_out];
        Self {
            layers: sizes.windows(2).map(|w| DenseLayer::init(w[0], w[1], &mut rng)).collect(),
            head,
            input_mean: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.run(x, None::<(&mut ChaCha8Rng, Dropout)>).0.pop().unwrap_or_default()
    }

    /// Forward pass with a fresh random dropout mask on every hidden unit.
    pub fn forward_dropout<R: Rng>(&self, x: &[f64], dropout: Dropout, rng: &mut R) -> Vec<f64> {
        self.run(x, Some((rng, dropout))).0.pop().unwrap_or_default()
    }

    /// Returns per-layer activations (input first, head output last) and the
    /// hidden dropout multipliers.
    fn run<R: Rng>(&self, x: &[f64], mut dropout: Option<(&mut R, Dropout)>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let input: Vec<f64> = x
            .iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect();
        let mut acts = vec![input];
        let mut masks = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.n_out);
            layer.apply(acts.last().expect("input present"), &mut z);
            if li < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
                if let Some((rng, d)) = dropout.as_mut() {
                    let keep = 1.0 - d.rate;
                    let mask: Vec<f64> = (0..z.len())
                        .map(|_| if rng.random::<f64>() < d.rate { 0.0 } else { 1.0 / keep })
                        .collect();
                    z.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    masks.push(mask);
                }
            } else {
                apply_head(self.head, &mut z);
            }
            acts.push(z);
        }
        (acts, masks)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Mlp = serde_json::from_str(s)?;
        for w in m.layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(Error::DimensionMismatch { expected: w[0].n_out, got: w[1].n_in });
            }
        }
        for l in &m.layers {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(invalid("layer weight shape does not match its declared size"));
            }
        }
        Ok(m)
    }
}

fn apply_head(head: OutputHead, z: &mut [f64]) {
    match head {
        OutputHead::Linear => {}
        OutputHead::Sigmoid => z.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
        OutputHead::Softmax => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            z.iter_mut().for_each(|v| *v = (*v - m).exp());
            let s: f64 = z.iter().sum();
            z.iter_mut().for_each(|v| *v /= s);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Normalization cap for error magnitudes (px or m).
    pub e_max: f64,
    pub theta_max: f64,
    /// Fraction of examples held out for validation loss.
    pub val_fraction: f64,
    /// Hidden-unit dropout rate used during training.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.2,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            e_max: 10.0,
            theta_max: 5.99,
            val_fraction: 0.2,
            dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.epochs > 0 && self.batch_size > 0) {
            return Err(Error::Config("learning rate, epochs and batch size must be positive".into()));
        }
        if !(self.e_max > 0.0 && self.theta_max > 0.0) {
            return Err(Error::Config("e_max and theta_max must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("val_fraction and dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub train: f64,
    /// NaN when no validation split was held out.
    pub val: f64,
}

pub fn write_loss_history_csv<W: Write>(history: &[LossRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for r in history {
        writeln!(out, "{},{:.10e},{:.10e}", r.epoch, r.train, r.val)?;
    }
    Ok(())
}

/// Mean loss of `mlp` over the selected examples.
pub fn mean_loss(mlp: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter().map(|&i| example_loss(mlp.head, &mlp.forward(&inputs[i]), &targets[i])).sum::<f64>() / idx.len() as f64
}

fn example_loss(head: OutputHead, y: &[f64], t: &[f64]) -> f64 {
    match head {
        OutputHead::Linear | OutputHead::Sigmoid => {
            y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
        }
        OutputHead::Softmax => -y.iter().zip(t).map(|(p, q)| q * p.max(1e-12).ln()).sum::<f64>(),
    }
}

/// Fits a fresh network to `(inputs, targets)`; bit-identical for equal
/// inputs and configuration. When a validation split is held out, the
/// weights from the epoch with the lowest validation loss are returned.
pub fn train_mlp(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    head: OutputHead,
    cfg: &TrainConfig,
) -> Result<(Mlp, Vec<LossRecord>)> {
    cfg.validate()?;
    let n = inputs.len();
    if n == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: targets.len() });
    }
    let d_in = inputs[0].len();
    let d_out = targets[0].len();
    if inputs.iter().any(|x| x.len() != d_in) || targets.iter().any(|t| t.len() != d_out) {
        return Err(invalid("ragged training data"));
    }
    let mut rng = stream_rng(cfg.seed, 0x747261696e);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 10 { (cfg.val_fraction * n as f64).round() as usize } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut mlp = Mlp::new(d_in, d_out, head, cfg.seed);
    standardize(&mut mlp, inputs, &train_idx);

    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> =
        mlp.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect();
    let mut grads = velocity.clone();
    let dropout = (cfg.dropout > 0.0).then_some(Dropout { rate: cfg.dropout });
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Mlp)> = None;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|(w, b)| {
                w.iter_mut().for_each(|v| *v = 0.0);
                b.iter_mut().for_each(|v| *v = 0.0);
            });
            for &i in batch {
                accumulate_grad(&mlp, &inputs[i], &targets[i], dropout.map(|d| (&mut rng, d)), &mut grads);
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for ((layer, (vw, vb)), (gw, gb)) in mlp.layers.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((w, v), g) in layer.weights.iter_mut().zip(vw.iter_mut()).zip(gw) {
                    *v = MOMENTUM * *v - scale * g;
                    *w += *v;
                }
                for ((b, v), g) in layer.bias.iter_mut().zip(vb.iter_mut()).zip(gb) {
                    *v = MOMENTUM * *v - scale * g;
                    *b += *v;
                }
            }
        }
        let val = mean_loss(&mlp, inputs, targets, &val_idx);
        history.push(LossRecord {
            epoch,
            train: mean_loss(&mlp, inputs, targets, &train_idx),
            val,
        });
        if !val_idx.is_empty() && best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, mlp.clone()));
        }
    }
    Ok((best.map_or(mlp, |(_, m)| m), history))
}

fn standardize(mlp: &mut Mlp, inputs: &[Vec<f64>], idx: &[usize]) {
    let d = mlp.n_inputs();
    let n = idx.len().max(1) as f64;
    for j in 0..d {
        let mean = idx.iter().map(|&i| inputs[i][j]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (inputs[i][j] - mean).powi(2)).sum::<f64>() / n;
        mlp.input_mean[j] = mean;
        mlp.input_scale[j] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
    }
}

fn accumulate_grad(
    mlp: &Mlp,
    x: &[f64],
    t: &[f64],
    dropout: Option<(&mut ChaCha8Rng, Dropout)>,
    grads: &mut [(Vec<f64>, Vec<f64>)],
) {
    let (acts, masks) = mlp.run(x, dropout);
    let y = acts.last().expect("output present");
    let mut delta: Vec<f64> = match mlp.head {
        OutputHead::Linear => y.iter().zip(t).map(|(a, b)| a - b).collect(),
        OutputHead::Sigmoid => y.iter().zip(t).map(|(a, b)| (a - b) * a * (1.0 - a)).collect(),
        OutputHead::Softmax => y.iter().zip(t).map(|(a, b)| a - b).collect(),
    };
    for li in (0..mlp.layers.len()).rev() {
        let layer = &mlp.layers[li];
        let a_in = &acts[li];
        let (gw, gb) = &mut grads[li];
        for (o, d) in delta.iter().enumerate() {
            gb[o] += d;
            let row = &mut gw[o * layer.n_in..(o + 1) * layer.n_in];
            row.iter_mut().zip(a_in).for_each(|(g, a)| *g += d * a);
        }
        if li == 0 {
            break;
        }
        let mut next = vec![0.0; layer.n_in];
        for (o, d) in delta.iter().enumerate() {
            let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
            next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
        }
        // a_in is the (possibly masked) tanh activation of layer li-1.
        let mask = masks.get(li - 1);
        for (j, n) in next.iter_mut().enumerate() {
            let m = mask.map_or(1.0, |m| m[j]);
            let h = if m == 0.0 { 0.0 } else { a_in[j] / m };
            *n *= (1.0 - h * h) * m;
        }
        delta = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn numeric_grad(mlp: &Mlp, x: &[f64], t: &[f64], li: usize, wi: usize) -> f64 {
        let h = 1e-6;
        let mut p = mlp.clone();
        p.layers[li].weights[wi] += h;
        let mut m = mlp.clone();
        m.layers[li].weights[wi] -= h;
        let f = |n: &Mlp| {
            let y = n.forward(x);
            match n.head {
                OutputHead::Softmax => example_loss(n.head, &y, t),
                _ => 0.5 * y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
            }
        };
        (f(&p) - f(&m)) / (2.0 * h)
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for head in [OutputHead::Linear, OutputHead::Sigmoid, OutputHead::Softmax] {
            let n_out = if head == OutputHead::Softmax { 4 } else { 1 };
            let mlp = Mlp::new(5, n_out, head, 11);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut t = vec![0.0; n_out];
            t[0] = 1.0;
            let mut grads: Vec<_> =
                mlp.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect();
            accumulate_grad(&mlp, &x, &t, None, &mut grads);
            for li in 0..3 {
                for wi in [0, 3, 7] {
                    let num = numeric_grad(&mlp, &x, &t, li, wi);
                    assert!((grads[li].0[wi] - num).abs() < 1e-6, "{head:?} layer {li} w{wi}");
                }
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mlp = Mlp::new(3, 4, OutputHead::Softmax, 1);
        for x in [[0.0, 0.0, 0.0], [100.0, -50.0, 3.0], [1e-3, 5.0, -7.0]] {
            let s: f64 = mlp.forward(&x).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_zeroes_some_units() {
        let mlp = Mlp::new(3, 1, OutputHead::Linear, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.3, -0.2, 0.9];
        let outs: Vec<f64> = (0..20).map(|_| mlp.forward_dropout(&x, Dropout { rate: 0.2 }, &mut rng)[0]).collect();
        assert!(outs.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mlp = Mlp::new(9, 4, OutputHead::Softmax, 5);
        let back = Mlp::from_json(&mlp.to_json().unwrap()).unwrap();
        assert_eq!(mlp, back);
    }

    #[test]
    fn training_is_deterministic_and_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let ts: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.5 * x[0] - 0.3 * x[1]]).collect();
        let cfg = TrainConfig { epochs: 80, ..Default::default() };
        let (a, h) = train_mlp(&xs, &ts, OutputHead::Linear, &cfg).unwrap();
        let (b, _) = train_mlp(&xs, &ts, OutputHead::Linear, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(h.last().unwrap().val < 1e-3, "{:?}", h.last());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(train_mlp(&[vec![0.0]], &[vec![0.0]], OutputHead::Linear, &cfg).is_err());
        assert!(train_mlp(&[], &[], OutputHead::Linear, &TrainConfig::default()).is_err());
    }
}
