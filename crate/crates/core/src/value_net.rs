//! Lightweight state-value estimator and value fusion.
//!
//! A state is mapped to a fixed hand-built feature vector and fed through a
//! two-layer perceptron `F -> H -> 1` with a softplus hidden layer. The net is
//! fit by mini-batch AdamW (or plain gradient descent) on MSE against terminal
//! rewards, with decoupled weight decay and a cosine-annealed learning rate.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{SequenceState, WorldInstance};
use crate::error::{validation, Result};
use crate::reward::{coverage_quality, redundancy_penalty};
use crate::scalar::Scalar;

/// Token counts are capped at this value before normalisation.
pub const COUNT_CAP: usize = 4;
/// n-gram order used for the redundancy feature.
pub const FEATURE_NGRAM_ORDER: usize = 3;
pub const DEFAULT_HIDDEN: usize = 32;

/// Feature vector of dimension `vocab_size + 3`, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector<F>(pub Vec<F>);

impl<F> FeatureVector<F> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn feature_dim(vocab_size: usize) -> usize {
    vocab_size + 3
}

/// Per-token counts (capped, over max_length), then length over max_length,
/// coverage and redundancy.
pub fn featurize<F: Scalar>(state: &SequenceState, world: &WorldInstance<F>) -> FeatureVector<F> {
    let mut counts = vec![0usize; world.vocab_size];
    for t in state.tokens() {
        if let Some(c) = counts.get_mut(t.index()) {
            *c += 1;
        }
    }
    let max_len = F::from_usize_lossy(world.max_length.max(1));
    let mut v: Vec<F> = counts
        .into_iter()
        .map(|c| (F::from_usize_lossy(c.min(COUNT_CAP)) / max_len).min(F::one()))
        .collect();
    v.push((F::from_usize_lossy(state.len()) / max_len).min(F::one()));
    v.push(coverage_quality(state, world));
    v.push(redundancy_penalty(state, FEATURE_NGRAM_ORDER));
    FeatureVector(v)
}

#[inline]
fn softplus<F: Scalar>(z: F) -> F {
    // ln(1 + e^z) without overflow
    if z > F::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Weights of the `F -> H -> 1` perceptron. `w1` is row-major `[hidden][input]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet<F> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub activation: String,
    pub w1: Vec<Vec<F>>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: F,
}

/// Gradient buffer shaped like [`ValueNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub w1: Vec<Vec<F>>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: F,
}

impl<F: Scalar> Gradients<F> {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self { w1: vec![vec![F::zero(); input]; hidden], b1: vec![F::zero(); hidden], w2: vec![F::zero(); hidden], b2: F::zero() }
    }

    /// Same layout as [`ValueNet::flat_params`].
    pub fn flatten(&self) -> Vec<F> {
        let mut v: Vec<F> = self.w1.iter().flatten().copied().collect();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }
}

impl<F: Scalar> ValueNet<F> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            activation: "softplus".into(),
            w1: vec![vec![F::zero(); input_dim]; hidden_dim],
            b1: vec![F::zero(); hidden_dim],
            w2: vec![F::zero(); hidden_dim],
            b2: F::zero(),
        }
    }

    /// Zero net sized for a world; predicts 0 everywhere.
    pub fn zeros_for(world: &WorldInstance<F>) -> Self {
        Self::zeros(feature_dim(world.vocab_size), DEFAULT_HIDDEN)
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = F::one() / F::from_usize_lossy(input_dim.max(1)).sqrt();
        let a2 = F::one() / F::from_usize_lossy(hidden_dim.max(1)).sqrt();
        let mut net = Self::zeros(input_dim, hidden_dim);
        for row in &mut net.w1 {
            for w in row.iter_mut() {
                *w = F::uniform(&mut rng, -a1, a1);
            }
        }
        for b in &mut net.b1 {
            *b = F::uniform(&mut rng, -a1, a1);
        }
        for w in &mut net.w2 {
            *w = F::uniform(&mut rng, -a2, a2);
        }
        net.b2 = F::uniform(&mut rng, -a2, a2);
        net
    }

    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim + 2 * self.hidden_dim + 1
    }

    pub fn predict(&self, features: &FeatureVector<F>) -> Result<F> {
        if features.dim() != self.input_dim {
            return Err(validation(format!(
                "feature dimension {} does not match network input {}",
                features.dim(),
                self.input_dim
            )));
        }
        Ok(self.forward(&features.0))
    }

    fn forward(&self, x: &[F]) -> F {
        let mut out = self.b2;
        for ((row, &b), &w2) in self.w1.iter().zip(&self.b1).zip(&self.w2) {
            let z = row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi);
            out += w2 * softplus(z);
        }
        out
    }

    /// Mean squared error over `batch` and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[F], F)]) -> (F, Gradients<F>) {
        let mut g = Gradients::zeros(self.input_dim, self.hidden_dim);
        let mut loss = F::zero();
        let mut z = vec![F::zero(); self.hidden_dim];
        let n = F::from_usize_lossy(batch.len().max(1));
        for &(x, y) in batch {
            let mut out = self.b2;
            for (j, row) in self.w1.iter().enumerate() {
                z[j] = row.iter().zip(x).fold(self.b1[j], |acc, (&w, &xi)| acc + w * xi);
                out += self.w2[j] * softplus(z[j]);
            }
            let err = out - y;
            loss += err * err;
            let d_out = F::lit(2.0) * err / n;
            g.b2 += d_out;
            for j in 0..self.hidden_dim {
                g.w2[j] += d_out * softplus(z[j]);
                let dz = d_out * self.w2[j] * sigmoid(z[j]);
                g.b1[j] += dz;
                for (gw, &xi) in g.w1[j].iter_mut().zip(x) {
                    *gw += dz * xi;
                }
            }
        }
        (loss / n, g)
    }

    pub fn flat_params(&self) -> Vec<F> {
        let mut v: Vec<F> = self.w1.iter().flatten().copied().collect();
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(validation(format!("expected {} parameters, got {}", self.param_count(), flat.len())));
        }
        let mut it = flat.iter().copied();
        for row in &mut self.w1 {
            for w in row.iter_mut() {
                *w = it.next().unwrap();
            }
        }
        for b in &mut self.b1 {
            *b = it.next().unwrap();
        }
        for w in &mut self.w2 {
            *w = it.next().unwrap();
        }
        self.b2 = it.next().unwrap();
        Ok(())
    }

    /// Upper bound on the Lipschitz constant w.r.t. the Euclidean norm:
    /// `||w2||_F * ||W1||_F` (softplus is 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> F {
        let n1: F = self.w1.iter().flatten().map(|w| *w * *w).sum::<F>().sqrt();
        let n2: F = self.w2.iter().map(|w| *w * *w).sum::<F>().sqrt();
        n1 * n2
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|p| p.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(text)?;
        if net.w1.len() != net.hidden_dim
            || net.w1.iter().any(|r| r.len() != net.input_dim)
            || net.b1.len() != net.hidden_dim
            || net.w2.len() != net.hidden_dim
        {
            return Err(validation("value net arrays do not match declared dimensions"));
        }
        if net.activation != "softplus" {
            return Err(validation(format!("unsupported activation '{}'", net.activation)));
        }
        Ok(net)
    }
}

/// `lambda_v * v_vlm + (1 - lambda_v) * v_hat`.
pub fn fuse_value<F: Scalar>(v_vlm: F, v_hat: F, lambda_v: F) -> Result<F> {
    if !(lambda_v >= F::zero() && lambda_v <= F::one()) {
        return Err(validation(format!("lambda_v {lambda_v} outside [0, 1]")));
    }
    if lambda_v == F::one() {
        return Ok(v_vlm);
    }
    if lambda_v == F::zero() {
        return Ok(v_hat);
    }
    Ok(lambda_v * v_vlm + (F::one() - lambda_v) * v_hat)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair<F> {
    pub features: FeatureVector<F>,
    pub target: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHyper<F> {
    pub optimizer: Optimizer,
    pub learning_rate: F,
    pub weight_decay: F,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub seed: u64,
}

/// Update rule. Weight decay is decoupled and touches weights only, never biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Adam moments (0.9, 0.999, eps 1e-8).
    #[default]
    AdamW,
    /// Plain gradient descent.
    Sgd,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<F: Scalar> Default for TrainingHyper<F> {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::AdamW,
            learning_rate: F::lit(1e-4),
            weight_decay: F::lit(0.01),
            batch_size: 256,
            epochs: 10,
            hidden_dim: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

/// Fitted parameters and the per-epoch mean MSE over the whole dataset.
#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub params: ValueNet<F>,
    pub loss_curve: Vec<F>,
}

pub fn dataset_mse<F: Scalar>(net: &ValueNet<F>, data: &[TrainingPair<F>]) -> F {
    if data.is_empty() {
        return F::zero();
    }
    let sse: F = data
        .iter()
        .map(|p| {
            let e = net.forward(&p.features.0) - p.target;
            e * e
        })
        .sum();
    sse / F::from_usize_lossy(data.len())
}

/// Cosine-annealed rate at `step` of `total` (reaches 0 after the last step).
pub fn cosine_rate<F: Scalar>(base: F, step: usize, total: usize) -> F {
    if total == 0 {
        return base;
    }
    let frac = F::from_usize_lossy(step) / F::from_usize_lossy(total);
    base * F::lit(0.5) * (F::one() + (F::lit(std::f64::consts::PI) * frac).cos())
}

pub fn train<F: Scalar>(data: &[TrainingPair<F>], hyper: &TrainingHyper<F>) -> Result<TrainOutcome<F>> {
    if data.is_empty() {
        return Err(validation("training dataset is empty"));
    }
    if !(hyper.learning_rate > F::zero()) || hyper.batch_size == 0 || hyper.hidden_dim == 0 {
        return Err(validation("learning rate, batch size and hidden size must be positive"));
    }
    let dim = data[0].features.dim();
    if let Some(bad) = data.iter().find(|p| p.features.dim() != dim || !p.target.is_finite()) {
        return Err(validation(format!(
            "inconsistent training pair (dim {} vs {dim}, target {})",
            bad.features.dim(),
            bad.target
        )));
    }
    let mut net = ValueNet::init(dim, hyper.hidden_dim, hyper.seed);
    let batch = hyper.batch_size.min(data.len());
    let steps_per_epoch = data.len().div_ceil(batch);
    let total_steps = steps_per_epoch * hyper.epochs;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_5eed);
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut step = 0usize;
    let mut buf: Vec<(&[F], F)> = Vec::with_capacity(batch);
    let n_params = net.param_count();
    let (mut m, mut v) = (vec![F::zero(); n_params], vec![F::zero(); n_params]);
    let (beta1, beta2, eps) = (F::lit(ADAM_BETA1), F::lit(ADAM_BETA2), F::lit(ADAM_EPS));
    // flat layout: w1, b1, w2, b2
    let n_w1 = net.hidden_dim * net.input_dim;
    let decayed: Vec<bool> =
        (0..n_params).map(|i| i < n_w1 || (i >= n_w1 + net.hidden_dim && i < n_w1 + 2 * net.hidden_dim)).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            buf.clear();
            buf.extend(chunk.iter().map(|&i| (data[i].features.0.as_slice(), data[i].target)));
            let (_, g) = net.loss_and_grad(&buf);
            let lr = cosine_rate(hyper.learning_rate, step, total_steps);
            let mut params = net.flat_params();
            let grads = g.flatten();
            match hyper.optimizer {
                Optimizer::Sgd => {
                    for i in 0..params.len() {
                        params[i] -= lr * grads[i];
                    }
                }
                Optimizer::AdamW => {
                    let t = (step + 1) as i32;
                    let c1 = F::one() - beta1.powi(t);
                    let c2 = F::one() - beta2.powi(t);
                    for i in 0..params.len() {
                        m[i] = beta1 * m[i] + (F::one() - beta1) * grads[i];
                        v[i] = beta2 * v[i] + (F::one() - beta2) * grads[i] * grads[i];
                        params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                }
            }
            for (p, &w) in params.iter_mut().zip(&decayed) {
                if w {
                    *p -= lr * hyper.weight_decay * *p;
                }
            }
            net.set_flat_params(&params)?;
            step += 1;
        }
        curve.push(dataset_mse(&net, data));
    }
    Ok(TrainOutcome { params: net, loss_curve: curve })
}

/// CSV with columns `f0..f{n-1},target`.
pub fn write_dataset_csv<F: Scalar, W: Write>(data: &[TrainingPair<F>], mut out: W) -> Result<()> {
    let dim = data.first().map(|p| p.features.dim()).unwrap_or(0);
    let header: Vec<String> = (0..dim).map(|i| format!("f{i}")).chain(std::iter::once("target".into())).collect();
    writeln!(out, "{}", header.join(","))?;
    for p in data {
        let row: Vec<String> = p.features.0.iter().chain(std::iter::once(&p.target)).map(|v| v.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_dataset_csv<F: Scalar, R: BufRead>(input: R) -> Result<Vec<TrainingPair<F>>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|s| s.trim().parse::<f64>().map(F::lit))
            .collect::<std::result::Result<Vec<F>, _>>()
            .map_err(|e| validation(format!("dataset line {}: {e}", i + 1)))?;
        let (target, feats) = vals.split_last().ok_or_else(|| validation("empty dataset row"))?;
        out.push(TrainingPair { features: FeatureVector(feats.to_vec()), target: *target });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{RegionSpec, TokenId};

    fn world() -> WorldInstance<f64> {
        WorldInstance {
            world_id: "vn".into(),
            vocab_size: 5,
            eos_token: TokenId(4),
            max_length: 6,
            reward_noise_sigma: 0.0,
            regions: vec![RegionSpec::new(0, [0], 0.6), RegionSpec::new(1, [1, 2], 0.4)],
        }
    }

    #[test]
    fn featurize_examples() {
        let w = world();
        let f = featurize(&SequenceState::empty(), &w);
        assert_eq!(f.0, vec![0.0; 8]);
        let full = SequenceState::from_tokens(&[0, 1, 2].map(TokenId), &w).unwrap();
        let f = featurize(&full, &w);
        assert_eq!(f.0[6], 1.0);
        assert_eq!(f.0[5], 0.5);
        let rep = SequenceState::from_tokens(&[3, 3, 3, 3].map(TokenId), &w).unwrap();
        let f = featurize(&rep, &w);
        assert_eq!(f.0[7], 0.75);
        assert!((f.0[3] - 4.0 / 6.0).abs() < 1e-15);
        assert!(f.0.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn predict_zero_and_hand() {
        let z = ValueNet::<f64>::zeros(2, 2);
        assert_eq!(z.predict(&FeatureVector(vec![0.3, 0.9])).unwrap(), 0.0);
        assert!(z.predict(&FeatureVector(vec![0.3])).is_err());

        // 2x2 hidden layer, hand evaluated:
        // z = [1*0.5 + 0*1 + 0, 0*0.5 + 2*1 - 1] = [0.5, 1.0]
        // out = 1*sp(0.5) - 0.5*sp(1.0) + 0.25
        let net = ValueNet {
            input_dim: 2,
            hidden_dim: 2,
            activation: "softplus".into(),
            w1: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            b1: vec![0.0, -1.0],
            w2: vec![1.0, -0.5],
            b2: 0.25,
        };
        let sp = |x: f64| (1.0 + x.exp()).ln();
        let expected = sp(0.5) - 0.5 * sp(1.0) + 0.25;
        let x = FeatureVector(vec![0.5, 1.0]);
        assert!((net.predict(&x).unwrap() - expected).abs() < 1e-12);
        assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse_value(0.2, 0.6, 1.0).unwrap(), 0.2);
        assert_eq!(fuse_value(0.2, 0.6, 0.0).unwrap(), 0.6);
        assert!((fuse_value(0.2f64, 0.6, 0.5).unwrap() - 0.4).abs() < 1e-12);
        assert!(fuse_value(0.2, 0.6, 1.1).is_err());
        assert!(fuse_value(0.2, 0.6, -0.1).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let data = vec![TrainingPair { features: FeatureVector(vec![0.1, 0.2]), target: 1.0 }];
        let hyper = TrainingHyper { epochs: 0, seed: 4, ..TrainingHyper::default() };
        let out = train(&data, &hyper).unwrap();
        assert!(out.loss_curve.is_empty());
        assert_eq!(out.params, ValueNet::init(2, DEFAULT_HIDDEN, 4));
        assert!(train::<f64>(&[], &hyper).is_err());
    }

    #[test]
    fn init_is_bounded() {
        let net = ValueNet::<f64>::init(9, 32, 1);
        let a1 = 1.0 / 3.0;
        assert!(net.w1.iter().flatten().all(|w| w.abs() <= a1));
        let a2 = 1.0 / 32f64.sqrt();
        assert!(net.w2.iter().all(|w| w.abs() <= a2));
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_rate(1e-4, 0, 10), 1e-4);
        assert!(cosine_rate(1e-4f64, 10, 10).abs() < 1e-20);
        assert!((cosine_rate(1.0f64, 5, 10) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let net = ValueNet::<f64>::init(3, 4, 2);
        let back = ValueNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let mut bad = net.clone();
        bad.w2.pop();
        assert!(ValueNet::<f64>::from_json(&serde_json::to_string(&bad).unwrap()).is_err());

        let data = vec![
            TrainingPair { features: FeatureVector(vec![0.25, 0.5]), target: 1.5 },
            TrainingPair { features: FeatureVector(vec![0.0, 1.0]), target: -0.125 },
        ];
        let mut buf = Vec::new();
        write_dataset_csv(&data, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,target\n"));
        let back: Vec<TrainingPair<f64>> = read_dataset_csv(buf.as_slice()).unwrap();
        assert_eq!(back, data);
    }
}
