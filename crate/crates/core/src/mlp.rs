//! Minimal multilayer perceptron: sigmoid activations throughout, binary
//! cross-entropy loss, mini-batch SGD. Used by the reference voxel scorer and
//! the post-synaptic partner classifier.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const BCE_EPS: f64 = 1e-12;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Keep outputs strictly inside (0, 1) even under saturation.
fn interior(y: f64) -> f64 {
    y.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Feed-forward network. `weights[l]` is a row-major `sizes[l+1] x sizes[l]`
/// matrix. When present, `feature_mean`/`feature_std` standardize inputs
/// before the first layer (statistics captured at training time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub feature_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub feature_std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_sizes: Vec<usize>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            learning_rate: 0.5,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            hidden_sizes: vec![20],
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be finite and > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Checks structural consistency; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid("MLP needs at least 2 layers"));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        if *self.layer_sizes.last().unwrap() != 1 {
            return Err(Error::invalid("output layer size must be 1"));
        }
        let n_layers = self.layer_sizes.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::invalid("weight/bias layer count mismatch"));
        }
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if self.weights[l].len() != fan_in * fan_out {
                return Err(Error::invalid(format!("layer {l} weight shape mismatch")));
            }
            if self.biases[l].len() != fan_out {
                return Err(Error::invalid(format!("layer {l} bias shape mismatch")));
            }
            if self.weights[l].iter().chain(&self.biases[l]).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l} has non-finite parameters")));
            }
        }
        for v in [&self.feature_mean, &self.feature_std] {
            if let Some(v) = v {
                if v.len() != self.layer_sizes[0] {
                    return Err(Error::invalid("standardization vector length mismatch"));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("standardization vector has non-finite values"));
                }
            }
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        match (&self.feature_mean, &self.feature_std) {
            (Some(mean), Some(std)) => x
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect(),
            _ => x.to_vec(),
        }
    }

    /// Activations per layer, including the (standardized) input.
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![self.standardize(x)];
        for l in 0..self.weights.len() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = &acts[l];
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &self.weights[l][o * fan_in..(o + 1) * fan_in];
                let z: f64 = self.biases[l][o]
                    + row.iter().zip(prev).map(|(w, a)| w * a).sum::<f64>();
                next.push(sigmoid(z));
            }
            acts.push(next);
        }
        acts
    }
}

/// Weights drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases
/// zero. Deterministic per seed.
pub fn mlp_init(layer_sizes: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_sizes.len() < 2 {
        return Err(Error::invalid("MLP needs at least 2 layers"));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid("layer sizes must be positive"));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(Error::invalid("output layer size must be 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..layer_sizes.len() - 1 {
        let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        weights.push(
            (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
        );
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        weights,
        biases,
        feature_mean: None,
        feature_std: None,
    })
}

/// Feed-forward evaluation; output strictly in (0, 1).
pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.input_dim() {
        return Err(Error::invalid(format!(
            "input dim {} != model input dim {}",
            x.len(),
            model.input_dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input contains non-finite values"));
    }
    let acts = model.forward_all(x);
    Ok(interior(acts.last().unwrap()[0]))
}

fn bce_loss(p: f64, label: f64) -> f64 {
    let p = interior(p);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Mean BCE loss over a sample set.
pub fn mlp_loss(model: &MlpModel, samples: &[(Vec<f64>, u8)]) -> Result<f64> {
    let mut total = 0.0;
    for (x, label) in samples {
        total += bce_loss(mlp_forward(model, x)?, *label as f64);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Analytic gradient of the single-sample BCE loss with respect to every
/// parameter, in the same layout as `weights`/`biases`.
fn gradients(model: &MlpModel, x: &[f64], label: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let acts = model.forward_all(x);
    let n_layers = model.weights.len();
    let mut grad_w: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();

    // Sigmoid output with BCE: delta at the output is simply (p - y).
    let mut delta: Vec<f64> = vec![acts[n_layers][0] - label];
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = (model.layer_sizes[l], model.layer_sizes[l + 1]);
        let prev = &acts[l];
        for o in 0..fan_out {
            grad_b[l][o] = delta[o];
            for i in 0..fan_in {
                grad_w[l][o * fan_in + i] = delta[o] * prev[i];
            }
        }
        if l > 0 {
            let mut next = vec![0.0; fan_in];
            for (i, d) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for o in 0..fan_out {
                    acc += delta[o] * model.weights[l][o * fan_in + i];
                }
                *d = acc * prev[i] * (1.0 - prev[i]);
            }
            delta = next;
        }
    }
    (grad_w, grad_b)
}

fn class_check(samples: &[(Vec<f64>, u8)]) -> Result<()> {
    let pos = samples.iter().filter(|(_, l)| *l == 1).count();
    if samples.is_empty() || pos == 0 || pos == samples.len() {
        return Err(Error::invalid(
            "training data must contain both classes",
        ));
    }
    Ok(())
}

/// Mini-batch SGD on binary cross-entropy. Standardization statistics are
/// computed from the training set and stored in the returned model. With
/// `epochs == 0` the model is returned unchanged.
pub fn mlp_train(model: &MlpModel, samples: &[(Vec<f64>, u8)], spec: &TrainSpec) -> Result<MlpModel> {
    spec.validate()?;
    if spec.epochs == 0 {
        return Ok(model.clone());
    }
    class_check(samples)?;
    let dim = model.input_dim();
    if samples.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::invalid("sample dimension mismatch"));
    }

    let mut trained = model.clone();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for (x, _) in samples {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for (x, _) in samples {
        for (s, (v, m)) in std.iter_mut().zip(x.iter().zip(&mean)) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut std {
        *s = s.sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    trained.feature_mean = Some(mean);
    trained.feature_std = Some(std);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..spec.epochs {
        // Fisher-Yates with the epoch-shared rng stream.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for batch in order.chunks(spec.batch_size) {
            let mut acc_w: Vec<Vec<f64>> =
                trained.weights.iter().map(|w| vec![0.0; w.len()]).collect();
            let mut acc_b: Vec<Vec<f64>> =
                trained.biases.iter().map(|b| vec![0.0; b.len()]).collect();
            for &idx in batch {
                let (x, label) = &samples[idx];
                let (gw, gb) = gradients(&trained, x, *label as f64);
                for (a, g) in acc_w.iter_mut().zip(&gw) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv;
                    }
                }
                for (a, g) in acc_b.iter_mut().zip(&gb) {
                    for (av, gv) in a.iter_mut().zip(g) {
                        *av += gv;
                    }
                }
            }
            let scale = spec.learning_rate / batch.len() as f64;
            for (w, g) in trained.weights.iter_mut().zip(&acc_w) {
                for (wv, gv) in w.iter_mut().zip(g) {
                    *wv -= scale * gv;
                }
            }
            for (b, g) in trained.biases.iter_mut().zip(&acc_b) {
                for (bv, gv) in b.iter_mut().zip(g) {
                    *bv -= scale * gv;
                }
            }
        }
        let loss = mlp_loss(&trained, samples)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
    }
    Ok(trained)
}

/// Compares the analytic gradient against central finite differences
/// (h = 1e-5) over every parameter; returns the max relative error.
pub fn mlp_gradient_check(model: &MlpModel, sample: &(Vec<f64>, u8)) -> Result<f64> {
    let (x, label) = sample;
    if x.len() != model.input_dim() {
        return Err(Error::invalid("sample dimension mismatch"));
    }
    let h = 1e-5;
    let label_f = *label as f64;
    let (grad_w, grad_b) = gradients(model, x, label_f);
    let loss_at = |m: &MlpModel| bce_loss(m.forward_all(x).last().unwrap()[0], label_f);

    let mut max_err = 0.0f64;
    let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut MlpModel, f64)| {
        let mut plus = model.clone();
        perturb(&mut plus, h);
        let mut minus = model.clone();
        perturb(&mut minus, -h);
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        // Mixed relative/absolute error: the floor keeps finite-difference
        // cancellation noise on near-zero gradients from dominating.
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3);
        max_err = max_err.max(err);
    };

    for l in 0..model.weights.len() {
        for i in 0..model.weights[l].len() {
            check(grad_w[l][i], &mut |m, d| m.weights[l][i] += d);
        }
        for i in 0..model.biases[l].len() {
            check(grad_b[l][i], &mut |m, d| m.biases[l][i] += d);
        }
    }
    Ok(max_err)
}

/// Fraction of samples classified correctly at threshold 0.5.
pub fn mlp_accuracy(model: &MlpModel, samples: &[(Vec<f64>, u8)]) -> Result<f64> {
    let mut correct = 0usize;
    for (x, label) in samples {
        let p = mlp_forward(model, x)?;
        if (p >= 0.5) == (*label == 1) {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len().max(1) as f64)
}
