//! Additive structural causal model with an exponential control surface:
//!
//! ```text
//! y = a·(xβ − ω) + (1 − a)·exp((x + w)β) + ε,   ε ~ N(0, noise_sd²)
//! ```
//!
//! Each row draws a single ε that is shared by both treatment arms, so the
//! oracle counterfactual is obtained by abduction (recover ε from the factual
//! row), action (flip `a`), and prediction (re-evaluate with the same ε).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{CausalDataset, DatasetMeta};
use super::DataError;
use crate::numkit::{sigmoid, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Propensity {
    Balanced,
    /// `P(A = 1 | x) = sigmoid(x · coefficients)`.
    Logistic(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub d_x: usize,
    pub beta: Vec<f64>,
    pub omega: f64,
    pub w_shift: Vec<f64>,
    pub noise_sd: f64,
    pub propensity: Propensity,
    pub seed: u64,
}

impl DgpConfig {
    /// IHDP-style defaults: a sparse coefficient pattern over
    /// {0, .1, .2, .3, .4} rescaled so |β|² does not grow with `d_x`, a 0.5
    /// covariate shift, ω chosen so the average treatment effect is 4, unit
    /// noise, and a mild logistic assignment on the first four covariates.
    pub fn ihdp_like(n: usize, d_x: usize, seed: u64) -> Self {
        let scale = (10.0 / d_x.max(1) as f64).sqrt().min(1.0);
        let beta: Vec<f64> = (0..d_x).map(|j| 0.1 * (j % 5) as f64 * scale).collect();
        let w_shift = vec![0.5; d_x];
        let mut cfg = Self {
            n,
            d_x,
            beta,
            omega: 0.0,
            w_shift,
            noise_sd: 1.0,
            propensity: Propensity::Logistic(
                (0..d_x)
                    .map(|j| match j {
                        0 => 0.4,
                        1 => -0.4,
                        2 => 0.2,
                        3 => -0.2,
                        _ => 0.0,
                    })
                    .collect(),
            ),
            seed,
        };
        cfg.omega = -4.0 - cfg.mean_control_outcome();
        cfg
    }

    /// E[exp((X + w)β)] for X ~ N(0, I).
    pub fn mean_control_outcome(&self) -> f64 {
        let shift: f64 = self.w_shift.iter().zip(&self.beta).map(|(w, b)| w * b).sum();
        let norm2: f64 = self.beta.iter().map(|b| b * b).sum();
        (shift + 0.5 * norm2).exp()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::Config(msg));
        if self.n < 1 {
            return bad("n must be at least 1".into());
        }
        if self.d_x < 1 {
            return bad("d_x must be at least 1".into());
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be > 0, got {}", self.noise_sd));
        }
        if self.beta.len() != self.d_x {
            return bad(format!("beta has {} entries, d_x is {}", self.beta.len(), self.d_x));
        }
        if self.w_shift.len() != self.d_x {
            return bad(format!(
                "w_shift has {} entries, d_x is {}",
                self.w_shift.len(),
                self.d_x
            ));
        }
        if let Propensity::Logistic(c) = &self.propensity {
            if c.len() != self.d_x {
                return bad(format!(
                    "propensity has {} coefficients, d_x is {}",
                    c.len(),
                    self.d_x
                ));
            }
        }
        Ok(())
    }

    /// Noise-free outcome of treatment arm `a` at covariates `x`.
    pub fn structural_mean(&self, x: &[f64], a: u8) -> f64 {
        if a == 1 {
            dot(x, &self.beta) - self.omega
        } else {
            x.iter()
                .zip(&self.w_shift)
                .zip(&self.beta)
                .map(|((x, w), b)| (x + w) * b)
                .sum::<f64>()
                .exp()
        }
    }

    /// Closed-form τ(x) = xβ − ω − exp((x + w)β).
    pub fn cate(&self, x: &[f64]) -> f64 {
        self.structural_mean(x, 1) - self.structural_mean(x, 0)
    }

    pub fn propensity_at(&self, x: &[f64]) -> f64 {
        match &self.propensity {
            Propensity::Balanced => 0.5,
            Propensity::Logistic(c) => sigmoid(dot(x, c)),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Abduction-action-prediction for the additive model: returns
/// `f(x, 1 − a) + (y − f(x, a))`.
pub fn oracle_counterfactual(x: &[f64], a: u8, y: f64, cfg: &DgpConfig) -> f64 {
    let eps = y - cfg.structural_mean(x, a);
    cfg.structural_mean(x, 1 - a) + eps
}

pub fn generate_ihdp_like(cfg: &DgpConfig) -> Result<CausalDataset, DataError> {
    simulate(cfg, |_, a| a)
}

/// Runs the generator with the treatment of row `i` replaced by
/// `assign(i, drawn_a)`. All random draws happen in the same order as in
/// [`generate_ihdp_like`], so covariates and noise are unchanged.
pub fn simulate(
    cfg: &DgpConfig,
    assign: impl Fn(usize, u8) -> u8,
) -> Result<CausalDataset, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, d) = (cfg.n, cfg.d_x);
    let mut xd = Vec::with_capacity(n * d);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    let mut ycf = Vec::with_capacity(n);

    for i in 0..n {
        let start = xd.len();
        for _ in 0..d {
            xd.push(rng.sample::<f64, _>(StandardNormal));
        }
        let x = &xd[start..];
        let u: f64 = rng.random();
        let eps = cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let drawn = u8::from(u < cfg.propensity_at(x));
        let ai = assign(i, drawn);

        let m0 = cfg.structural_mean(x, 0);
        let m1 = cfg.structural_mean(x, 1);
        if !(m0.is_finite() && m1.is_finite()) {
            return Err(DataError::NonFinite { row: i });
        }
        let yi = if ai == 1 { m1 } else { m0 } + eps;
        a.push(ai);
        y.push(yi);
        mu0.push(m0);
        mu1.push(m1);
        ycf.push(oracle_counterfactual(x, ai, yi, cfg));
    }

    Ok(CausalDataset {
        x: Matrix::new(n, d, xd)?,
        a,
        y,
        mu0: Some(mu0),
        mu1: Some(mu1),
        ycf: Some(ycf),
        meta: DatasetMeta {
            name: "ihdp_like".into(),
            seed: Some(cfg.seed),
        },
    })
}
