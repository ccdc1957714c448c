use serde::{Deserialize, Serialize};

use super::dataset::CausalDataset;
use super::DataError;
use crate::numkit::sigmoid;

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

const MAX_STEPS: usize = 10_000;
const GRAD_TOL: f64 = 1e-6;

/// Logistic model of P(A = 1 | x); `coef[0]` is the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coef: Vec<f64>,
    pub steps: usize,
}

impl PropensityModel {
    /// Clipped to [0.01, 0.99].
    pub fn predict(&self, x: &[f64]) -> f64 {
        let logit = self.coef[0]
            + self.coef[1..]
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum::<f64>();
        sigmoid(logit).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1)
    }
}

/// Full-batch gradient descent on the mean logistic loss. The step size is
/// the inverse of the Lipschitz bound `mean |(1, x)|² / 4`.
pub fn fit_propensity(ds: &CausalDataset) -> Result<PropensityModel, DataError> {
    if !ds.has_both_arms() {
        return Err(DataError::Overlap);
    }
    let (n, d) = (ds.n(), ds.d_x());
    let mean_norm2 = (0..n)
        .map(|i| 1.0 + ds.x_row(i).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let lr = 4.0 / mean_norm2;

    let mut coef = vec![0.0; d + 1];
    let mut grad = vec![0.0; d + 1];
    let mut steps = 0;
    while steps < MAX_STEPS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let x = ds.x_row(i);
            let logit = coef[0] + coef[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
            let r = sigmoid(logit) - f64::from(ds.a[i]);
            grad[0] += r;
            for (g, v) in grad[1..].iter_mut().zip(x) {
                *g += r * v;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n as f64);
        if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < GRAD_TOL {
            break;
        }
        for (c, g) in coef.iter_mut().zip(&grad) {
            *c -= lr * g;
        }
        steps += 1;
    }
    Ok(PropensityModel { coef, steps })
}
