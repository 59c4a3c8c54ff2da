//! Radial basis function network: Gaussian units exp(-beta * r^2) around
//! k-means centers, linear output fitted by ridge least squares, with
//! optional gradient fine-tuning.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::sample_meta_summary;
use super::{fit_scaler, ModelError, ModelKind, ModelParams, TrainedModel, TrainingMeta};
use crate::features::{FeatureSet, TravelSample};

/// Width floor: per-center sigma never drops below this.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Copy, Clone, PartialEq, Serialize, Deserialize)]
pub enum RbfnTraining {
    /// Centers by k-means, widths from cluster spread, output weights by
    /// ridge least squares. Deterministic.
    LeastSquares,
    /// Least squares first, then full-gradient fine-tuning of weights,
    /// widths and centers.
    Gradient { epochs: usize, learning_rate: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbfnConfig {
    /// Hidden unit count M; presets 10, 15, 25, 35.
    pub centers: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub ridge_lambda: f64,
    pub training: RbfnTraining,
}

impl Default for RbfnConfig {
    fn default() -> Self {
        Self {
            centers: 25,
            seed: 0,
            kmeans_iters: 50,
            ridge_lambda: 1e-6,
            training: RbfnTraining::LeastSquares,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbfnNet {
    /// Row-major (M, dim).
    pub centers: Vec<f64>,
    pub dim: usize,
    /// Per-center beta in exp(-beta * r^2).
    pub betas: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RbfnNet {
    pub fn m(&self) -> usize {
        self.betas.len()
    }

    fn basis(&self, x: &[f64], j: usize) -> f64 {
        let c = &self.centers[j * self.dim..(j + 1) * self.dim];
        let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        (-self.betas[j] * r2).exp()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for j in 0..self.m() {
            acc += self.weights[j] * self.basis(x, j);
        }
        acc
    }

    /// Parameters flattened as [weights(M), bias, betas(M), centers(M*dim)].
    pub fn param_count(&self) -> usize {
        self.m() * 2 + 1 + self.centers.len()
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let m = self.m();
        if idx < m {
            self.weights[idx]
        } else if idx == m {
            self.bias
        } else if idx < 2 * m + 1 {
            self.betas[idx - m - 1]
        } else {
            self.centers[idx - 2 * m - 1]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let m = self.m();
        if idx < m {
            self.weights[idx] = v;
        } else if idx == m {
            self.bias = v;
        } else if idx < 2 * m + 1 {
            self.betas[idx - m - 1] = v;
        } else {
            self.centers[idx - 2 * m - 1] = v;
        }
    }

    pub fn mse_loss(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let e = self.forward(x) - y;
            acc += e * e;
        }
        acc / xs.len() as f64
    }

    /// Analytic gradient of [`Self::mse_loss`], flattened like the params.
    pub fn mse_grads(&self, xs: &[Vec<f64>], ys: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut g = vec![0.0; self.param_count()];
        let inv_n = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            let pred = self.forward(x);
            let e = 2.0 * (pred - y) * inv_n;
            for j in 0..m {
                let c = &self.centers[j * self.dim..(j + 1) * self.dim];
                let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                let phi = (-self.betas[j] * r2).exp();
                g[j] += e * phi;
                g[m + 1 + j] += e * self.weights[j] * phi * (-r2);
                for d in 0..self.dim {
                    g[2 * m + 1 + j * self.dim + d] +=
                        e * self.weights[j] * phi * 2.0 * self.betas[j] * (x[d] - c[d]);
                }
            }
            g[m] += e;
        }
        g
    }
}

/// Seeded k-means++ with Lloyd iterations. Returns (centers row-major,
/// assignment per point).
fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let dim = points[0].len();
    let n = points.len();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass at existing centers; pick any point.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.push(points[next].clone());
        let c = centers.last().unwrap();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, c));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0usize, f64::MAX);
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            if assign[i] != best.0 {
                assign[i] = best.0;
                moved = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for (c, s) in centers[j].iter_mut().zip(&sums[j]) {
                    *c = s / counts[j] as f64;
                }
            }
        }
        if !moved {
            break;
        }
    }
    (centers.concat(), assign)
}

fn fit_rbfn_net(
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &RbfnConfig,
    seed: u64,
) -> Result<RbfnNet, ModelError> {
    let dim = xs[0].len();
    let m = config.centers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (centers, assign) = kmeans(xs, m, config.kmeans_iters, &mut rng);

    let mut counts = vec![0usize; m];
    for &a in &assign {
        counts[a] += 1;
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(ModelError::DegenerateCluster);
    }

    // Widths: sigma_j = mean distance from center j to its members.
    let mut sigma = vec![0.0f64; m];
    for (p, &a) in xs.iter().zip(&assign) {
        let c = &centers[a * dim..(a + 1) * dim];
        let d: f64 = p
            .iter()
            .zip(c)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        sigma[a] += d;
    }
    let betas: Vec<f64> = sigma
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            let sg = (s / c as f64).max(SIGMA_FLOOR);
            1.0 / (2.0 * sg * sg)
        })
        .collect();

    let mut net = RbfnNet {
        centers,
        dim,
        betas,
        weights: vec![0.0; m],
        bias: 0.0,
    };

    // Output layer by ridge least squares over [phi_1..phi_M, 1].
    let n = xs.len();
    let mut phi = DMatrix::zeros(n, m + 1);
    for (i, x) in xs.iter().enumerate() {
        for j in 0..m {
            phi[(i, j)] = net.basis(x, j);
        }
        phi[(i, m)] = 1.0;
    }
    let y = DVector::from_column_slice(ys);
    let mut gram = phi.transpose() * &phi;
    for j in 0..=m {
        gram[(j, j)] += config.ridge_lambda;
    }
    let rhs = phi.transpose() * y;
    let solution = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .ok_or(ModelError::DegenerateCluster)?;
    net.weights = solution.as_slice()[..m].to_vec();
    net.bias = solution[m];

    if let RbfnTraining::Gradient { epochs, learning_rate } = config.training {
        for epoch in 0..epochs {
            let grads = net.mse_grads(xs, ys);
            for (i, g) in grads.iter().enumerate() {
                let updated = net.get_param(i) - learning_rate * g;
                net.set_param(i, updated);
            }
            if !net.mse_loss(xs, ys).is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
        }
    }
    Ok(net)
}

/// Train an RBFN on travel samples. An empty k-means cluster triggers one
/// re-seed (seed+1) before giving up with [`ModelError::DegenerateCluster`].
pub fn train_rbfn(
    config: &RbfnConfig,
    samples: &[TravelSample],
    feature_set: FeatureSet,
) -> Result<TrainedModel, ModelError> {
    if samples.len() < config.centers.max(2) {
        return Err(ModelError::TooFewSamples {
            got: samples.len(),
            need: config.centers.max(2),
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

    let net = fit_rbfn_net(&xs_scaled, &ys_scaled, config, config.seed).or_else(|e| {
        if matches!(e, ModelError::DegenerateCluster) {
            fit_rbfn_net(&xs_scaled, &ys_scaled, config, config.seed.wrapping_add(1))
        } else {
            Err(e)
        }
    })?;
    let final_loss = net.mse_loss(&xs_scaled, &ys_scaled);

    let (lines, dates) = sample_meta_summary(samples);
    Ok(TrainedModel {
        kind: ModelKind::Rbfn,
        feature_set,
        scaler: Some(scaler),
        label_scaler: Some(label_scaler),
        params: ModelParams::Rbfn(net),
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
