//! Feed-forward multi-layer perceptron with mini-batch SGD + momentum,
//! trained on mean-squared error. Hand-rolled and fully deterministic given
//! a seed, so trained parameters are bit-reproducible.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fit_scaler, ModelError, ModelKind, ModelParams, TrainedModel, TrainingMeta};
use crate::features::{FeatureSet, TravelSample};

#[derive(Debug, Copy, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Tanh,
    /// Linear output layer.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(Activation::ReLU),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    /// One activation per hidden layer; a single entry applies to all.
    pub activations: Vec<Activation>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![12, 32],
            activations: vec![Activation::ReLU],
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 256,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl MlpConfig {
    fn activation_for(&self, layer: usize) -> Activation {
        if self.activations.len() == 1 {
            self.activations[0]
        } else {
            self.activations[layer]
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major (out_dim, in_dim).
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl DenseLayer {
    fn forward_into(&self, input: &[f64], z: &mut Vec<f64>, a: &mut Vec<f64>) {
        z.clear();
        a.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            z.push(acc);
            a.push(self.activation.apply(acc));
        }
    }
}

/// A trained (or in-training) network. Output is a single linear unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpNet {
    pub layers: Vec<DenseLayer>,
}

impl MlpNet {
    /// Seeded initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn init(input_dim: usize, config: &MlpConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden_layers);
        dims.push(1);
        let mut layers = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let activation = if l == dims.len() - 2 {
                Activation::Identity
            } else {
                config.activation_for(l)
            };
            layers.push(DenseLayer {
                weights,
                biases: vec![0.0; fan_out],
                in_dim: fan_in,
                out_dim: fan_out,
                activation,
            });
        }
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn forward(&self, input: &[f64]) -> f64 {
        let mut cur = input.to_vec();
        let mut z = Vec::new();
        let mut a = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut z, &mut a);
            std::mem::swap(&mut cur, &mut a);
        }
        cur[0]
    }

    /// Forward pass keeping pre-activations and activations per layer.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let mut z = Vec::new();
            let mut a = Vec::new();
            layer.forward_into(activations.last().unwrap(), &mut z, &mut a);
            zs.push(z);
            activations.push(a);
        }
        (zs, activations)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return l.biases[idx];
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = v;
                return;
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                l.biases[idx] = v;
                return;
            }
            idx -= l.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Mean-squared error over a batch.
    pub fn mse_loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let e = self.forward(x) - y;
            acc += e * e;
        }
        acc / xs.len() as f64
    }

    /// Analytic gradient of [`Self::mse_loss`] w.r.t. every parameter,
    /// flattened in (layer: weights then biases) order.
    pub fn mse_grads(&self, xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        let mut grads: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len() + l.biases.len()])
            .collect();
        let inv_n = 1.0 / xs.len() as f64;

        for (x, &y) in xs.iter().zip(ys) {
            let (zs, activations) = self.forward_trace(x);
            let pred = activations.last().unwrap()[0];
            // delta of the output layer under d/dpred of (pred - y)^2 / n
            let mut delta = vec![2.0 * (pred - y) * inv_n];
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                for (d, &z) in delta.iter_mut().zip(&zs[l]) {
                    *d *= layer.activation.derivative(z);
                }
                let input = &activations[l];
                let g = &mut grads[l];
                for o in 0..layer.out_dim {
                    for i in 0..layer.in_dim {
                        g[o * layer.in_dim + i] += delta[o] * input[i];
                    }
                    g[layer.weights.len() + o] += delta[o];
                }
                if l > 0 {
                    let mut next = vec![0.0; layer.in_dim];
                    for o in 0..layer.out_dim {
                        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (n, w) in next.iter_mut().zip(row) {
                            *n += w * delta[o];
                        }
                    }
                    delta = next;
                }
            }
        }
        grads.concat()
    }
}

/// Train a network on already-scaled rows. Returns the net and the mean
/// batch loss of the last epoch (full-dataset MSE when `epochs == 0`).
pub fn train_net(
    config: &MlpConfig,
    xs: &[Vec<f64>],
    ys: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(MlpNet, f64), ModelError> {
    assert_eq!(xs.len(), ys.len());
    let mut net = MlpNet::init(xs[0].len(), config, rng);
    let mut velocity: Vec<f64> = vec![0.0; net.param_count()];
    let mut final_loss = net.mse_loss(xs, ys);
    if !final_loss.is_finite() {
        return Err(ModelError::NonFiniteLoss { epoch: 0 });
    }

    let mut order: Vec<usize> = (0..xs.len()).collect();
    let batch = config.batch_size.max(1);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let grads = net.mse_grads(&bx, &by);
            for (i, g) in grads.iter().enumerate() {
                velocity[i] = config.momentum * velocity[i] - config.learning_rate * g;
                let updated = net.get_param(i) + velocity[i];
                net.set_param(i, updated);
            }
            let loss = net.mse_loss(&bx, &by);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss;
            batches += 1;
        }
        final_loss = epoch_loss / batches as f64;
    }
    Ok((net, final_loss))
}

/// Train an MLP on travel samples: scale features and labels, run seeded
/// mini-batch SGD, and package everything as a [`TrainedModel`].
pub fn train_mlp(
    config: &MlpConfig,
    samples: &[TravelSample],
    feature_set: FeatureSet,
) -> Result<TrainedModel, ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::TooFewSamples {
            got: samples.len(),
            need: 2,
        });
    }
    let mut xs = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let row = feature_set
            .flatten(&s.features)
            .map_err(|missing| ModelError::LayoutMismatch {
                set: feature_set,
                missing,
            })?;
        xs.push(row);
        labels.push(s.label);
    }
    let scaler = fit_scaler(&xs)?;
    let label_scaler = super::scaler::fit_label_scaler(&labels)?;
    let xs_scaled: Vec<Vec<f64>> = xs.iter().map(|r| super::apply_scaler(&scaler, r)).collect();
    let ys_scaled: Vec<f64> = labels
        .iter()
        .map(|&y| label_scaler.apply_one(0, y))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (net, final_loss) = train_net(config, &xs_scaled, &ys_scaled, &mut rng)?;

    let (lines, dates) = sample_meta_summary(samples);
    Ok(TrainedModel {
        kind: ModelKind::Mlp,
        feature_set,
        scaler: Some(scaler),
        label_scaler: Some(label_scaler),
        params: ModelParams::Mlp(net),
        meta: TrainingMeta {
            lines,
            dates,
            seed: config.seed,
            final_loss: Some(final_loss),
        },
        line: None,
        fallback_schedule: None,
    })
}

pub(super) fn sample_meta_summary(samples: &[TravelSample]) -> (Vec<String>, Vec<chrono::NaiveDate>) {
    let mut lines: Vec<String> = samples.iter().map(|s| s.meta.line.clone()).collect();
    lines.sort();
    lines.dedup();
    let mut dates: Vec<chrono::NaiveDate> = samples.iter().map(|s| s.meta.date).collect();
    dates.sort();
    dates.dedup();
    (lines, dates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                vec![
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let ys = xs.iter().map(|x| 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[2] + 1.0).collect();
        (xs, ys)
    }

    fn variance(ys: &[f64]) -> f64 {
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / ys.len() as f64
    }

    #[test]
    fn learns_exact_linear_function() {
        let (xs, ys) = linear_data(200, 3);
        let config = MlpConfig {
            hidden_layers: vec![4],
            learning_rate: 0.02,
            epochs: 200,
            batch_size: 32,
            seed: 5,
            ..MlpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (net, _) = train_net(&config, &xs, &ys, &mut rng).unwrap();
        let mse = net.mse_loss(&xs, &ys);
        let var = variance(&ys);
        assert!(mse < 0.01 * var, "training MSE {mse} vs 1% of variance {}", 0.01 * var);
    }

    #[test]
    fn zero_epochs_keeps_initialized_network() {
        let (xs, ys) = linear_data(50, 4);
        let config = MlpConfig {
            hidden_layers: vec![4],
            epochs: 0,
            seed: 9,
            ..MlpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (net, loss) = train_net(&config, &xs, &ys, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(config.seed);
        let init = MlpNet::init(3, &config, &mut rng2);
        for i in 0..net.param_count() {
            assert_eq!(net.get_param(i), init.get_param(i));
        }
        assert!((loss - net.mse_loss(&xs, &ys)).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let (xs, ys) = linear_data(20, 6);
        let config = MlpConfig {
            hidden_layers: vec![12, 32],
            seed: 13,
            ..MlpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net = MlpNet::init(3, &config, &mut rng);
        let analytic = net.mse_grads(&xs, &ys);

        let mut pick = ChaCha8Rng::seed_from_u64(99);
        let h = 1e-5;
        for _ in 0..10 {
            let i = pick.gen_range(0..net.param_count());
            let orig = net.get_param(i);
            net.set_param(i, orig + h);
            let plus = net.mse_loss(&xs, &ys);
            net.set_param(i, orig - h);
            let minus = net.mse_loss(&xs, &ys);
            net.set_param(i, orig);
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic[i] - numeric).abs() / denom;
            assert!(rel < 1e-4, "param {i}: analytic {} vs numeric {numeric}", analytic[i]);
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_training() {
        let (xs, ys) = linear_data(100, 8);
        let config = MlpConfig {
            hidden_layers: vec![6],
            epochs: 10,
            seed: 21,
            ..MlpConfig::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(config.seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(config.seed);
        let (n1, l1) = train_net(&config, &xs, &ys, &mut r1).unwrap();
        let (n2, l2) = train_net(&config, &xs, &ys, &mut r2).unwrap();
        assert_eq!(l1, l2);
        for i in 0..n1.param_count() {
            assert_eq!(n1.get_param(i), n2.get_param(i));
        }
    }

    #[test]
    fn runaway_learning_rate_diverges_cleanly() {
        let (xs, mut ys) = linear_data(50, 10);
        for y in &mut ys {
            *y *= 1e6;
        }
        let config = MlpConfig {
            hidden_layers: vec![8],
            learning_rate: 1e18,
            epochs: 50,
            seed: 2,
            ..MlpConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let err = train_net(&config, &xs, &ys, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::NonFiniteLoss { .. }));
    }
}
