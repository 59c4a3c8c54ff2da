//! Z-score feature scaling from training-set statistics.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Per-column mean and population standard deviation. Columns with zero
/// spread pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_one(&self, col: usize, x: f64) -> f64 {
        if self.std[col] > 0.0 {
            (x - self.mean[col]) / self.std[col]
        } else {
            x
        }
    }

    /// Inverse transform of a single-column scaler (used for labels).
    pub fn unapply_one(&self, y: f64) -> f64 {
        if self.std[0] > 0.0 {
            y * self.std[0] + self.mean[0]
        } else {
            y
        }
    }
}

/// Fit per-column statistics over row-major data. Needs at least 2 rows.
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<Scaler, ModelError> {
    if rows.len() < 2 {
        return Err(ModelError::TooFewSamples {
            got: rows.len(),
            need: 2,
        });
    }
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for row in rows {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
    Ok(Scaler { mean, std })
}

/// Apply the scaler to one row.
pub fn apply_scaler(scaler: &Scaler, row: &[f64]) -> Vec<f64> {
    debug_assert_eq!(row.len(), scaler.dim());
    row.iter()
        .enumerate()
        .map(|(i, &x)| scaler.apply_one(i, x))
        .collect()
}

/// Label standardization for training targets. Unlike feature scaling,
/// constant labels are still centered (scale 1), so a constant-label task
/// starts at the optimum instead of regressing raw seconds.
pub(super) fn fit_label_scaler(labels: &[f64]) -> Result<Scaler, ModelError> {
    let rows: Vec<Vec<f64>> = labels.iter().map(|&y| vec![y]).collect();
    let mut scaler = fit_scaler(&rows)?;
    if scaler.std[0] == 0.0 {
        scaler.std[0] = 1.0;
    }
    Ok(scaler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_column_passes_through() {
        let rows = vec![vec![5.0, 1.0], vec![5.0, 3.0], vec![5.0, 5.0]];
        let s = fit_scaler(&rows).unwrap();
        let scaled = apply_scaler(&s, &rows[0]);
        assert_eq!(scaled[0], 5.0);
    }

    #[test]
    fn two_point_z_score() {
        let rows = vec![vec![0.0], vec![10.0]];
        let s = fit_scaler(&rows).unwrap();
        assert_eq!(apply_scaler(&s, &rows[0]), vec![-1.0]);
        assert_eq!(apply_scaler(&s, &rows[1]), vec![1.0]);
    }

    #[test]
    fn scaled_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| vec![rng.gen_range(-100.0..100.0), rng.gen_range(0.0..1e6)])
            .collect();
        let s = fit_scaler(&rows).unwrap();
        let mut sums = [0.0f64; 2];
        for row in &rows {
            let scaled = apply_scaler(&s, row);
            sums[0] += scaled[0];
            sums[1] += scaled[1];
        }
        assert!((sums[0] / 500.0).abs() < 1e-9);
        assert!((sums[1] / 500.0).abs() < 1e-9);
    }

    #[test]
    fn one_row_rejected() {
        assert!(matches!(
            fit_scaler(&[vec![1.0]]),
            Err(ModelError::TooFewSamples { got: 1, .. })
        ));
    }

    #[test]
    fn label_unapply_inverts() {
        let rows = vec![vec![10.0], vec![20.0], vec![40.0]];
        let s = fit_scaler(&rows).unwrap();
        for &v in &[10.0, 20.0, 40.0, 33.3] {
            let y = s.apply_one(0, v);
            assert!((s.unapply_one(y) - v).abs() < 1e-12);
        }
    }
}
