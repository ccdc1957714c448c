use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::CausalDataset;
use super::DataError;
use crate::numkit::Matrix;

const SD_FLOOR: f64 = 1e-12;

/// Shuffled `(train, test)` index sets for `n` rows.
pub fn split_indices(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Split(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(DataError::Split(format!(
            "fraction {test_fraction} of {n} rows leaves an empty side"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

pub fn split(
    ds: &CausalDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(CausalDataset, CausalDataset), DataError> {
    let (train, test) = split_indices(ds.n(), test_fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// `k` disjoint folds covering `0..n`, shuffled under `seed`.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if k < 2 || k > n {
        return Err(DataError::Split(format!("cannot build {k} folds from {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    Ok(folds)
}

/// Per-column affine map to zero mean and unit (population) variance.
///
/// Columns whose standard deviation is below 1e-12 are stored with mean 0
/// and sd 1 so they pass through unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd < SD_FLOOR {
        (0.0, 1.0)
    } else {
        (mean, sd)
    }
}

impl Scaler {
    pub fn identity(d_x: usize) -> Self {
        Self {
            x_mean: vec![0.0; d_x],
            x_sd: vec![1.0; d_x],
            y_mean: 0.0,
            y_sd: 1.0,
        }
    }

    pub fn fit(ds: &CausalDataset) -> Self {
        let (mut x_mean, mut x_sd) = (Vec::new(), Vec::new());
        for j in 0..ds.d_x() {
            let (m, s) = moments((0..ds.n()).map(|i| ds.x.get(i, j)));
            x_mean.push(m);
            x_sd.push(s);
        }
        let (y_mean, y_sd) = moments(ds.y.iter().copied());
        Self {
            x_mean,
            x_sd,
            y_mean,
            y_sd,
        }
    }

    pub fn d_x(&self) -> usize {
        self.x_mean.len()
    }

    pub fn x_to_model(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_sd))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn x_from_model(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.x_mean.iter().zip(&self.x_sd))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn y_to_model(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_sd
    }

    pub fn y_from_model(&self, y: f64) -> f64 {
        y * self.y_sd + self.y_mean
    }

    /// log |dy_model / dy| for converting model-space log densities.
    pub fn log_jacobian(&self) -> f64 {
        -self.y_sd.ln()
    }

    fn map(
        &self,
        ds: &CausalDataset,
        fx: impl Fn(&[f64]) -> Vec<f64>,
        fy: impl Fn(f64) -> f64,
    ) -> CausalDataset {
        let mut xd = Vec::with_capacity(ds.x.len());
        for i in 0..ds.n() {
            xd.extend(fx(ds.x_row(i)));
        }
        let col = |c: &Vec<f64>| c.iter().map(|&v| fy(v)).collect::<Vec<_>>();
        CausalDataset {
            x: Matrix::new(ds.n(), ds.d_x(), xd).expect("row lengths preserved"),
            a: ds.a.clone(),
            y: col(&ds.y),
            mu0: ds.mu0.as_ref().map(col),
            mu1: ds.mu1.as_ref().map(col),
            ycf: ds.ycf.as_ref().map(col),
            meta: ds.meta.clone(),
        }
    }

    /// Maps covariates and every outcome-scale column into model units.
    pub fn apply(&self, ds: &CausalDataset) -> CausalDataset {
        self.map(ds, |x| self.x_to_model(x), |y| self.y_to_model(y))
    }

    pub fn inverse(&self, ds: &CausalDataset) -> CausalDataset {
        self.map(ds, |x| self.x_from_model(x), |y| self.y_from_model(y))
    }
}

pub fn standardize(ds: &CausalDataset) -> Result<(CausalDataset, Scaler), DataError> {
    if ds.n() < 2 {
        return Err(DataError::Split(format!(
            "standardize needs at least 2 rows, got {}",
            ds.n()
        )));
    }
    let scaler = Scaler::fit(ds);
    Ok((scaler.apply(ds), scaler))
}
