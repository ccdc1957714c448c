//! Causal queries against a trained [`FlowModel`], in raw data units.
//!
//! Covariates and outcomes are mapped through the model's scaler on the way
//! in and out; log densities include the scaler's Jacobian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ode_engine::{self, OdeConfig, OdeError};
use crate::velocity_net::{FlowModel, NetError};

#[derive(Debug, thiserror::Error)]
pub enum CausalError {
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("covariate dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("treatment must be 0 or 1, got {0}")]
    Treatment(u8),
    #[error(transparent)]
    Ode(#[from] OdeError),
}

pub const DEFAULT_N_MC: usize = 100;
pub const DEFAULT_MAP_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoSampleSet {
    pub x: Vec<f64>,
    pub a: u8,
    /// `(ŷ, log p(ŷ | x, a))` in draw order.
    pub samples: Vec<(f64, f64)>,
    pub seed: u64,
}

impl PoSampleSet {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.0)
    }

    pub fn mean(&self) -> f64 {
        self.values().sum::<f64>() / self.samples.len() as f64
    }
}

/// Seed for row `row` of a query run under `seed` (SplitMix64 finaliser of the
/// pair), so rows can be evaluated in any order.
pub fn row_seed(seed: u64, row: u64) -> u64 {
    let mut z = seed ^ row.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` standard normal latent draws from `seed`.
pub fn latent_draws(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check(model: &FlowModel, x: &[f64], a: u8) -> Result<Vec<f64>, CausalError> {
    if x.len() != model.d_x() {
        return Err(CausalError::Dimension {
            expected: model.d_x(),
            got: x.len(),
        });
    }
    if a > 1 {
        return Err(CausalError::Treatment(a));
    }
    Ok(model.scaler.x_to_model(x))
}

fn net_err(e: OdeError) -> CausalError {
    match e {
        OdeError::Net(NetError::Dimension { expected, got }) => {
            CausalError::Dimension { expected, got }
        }
        e => e.into(),
    }
}

/// Draws `z ~ N(0, 1)` and decodes each under `(x, a)` with its log density.
pub fn sample_po(
    model: &FlowModel,
    x: &[f64],
    a: u8,
    n_samples: usize,
    ode_cfg: &OdeConfig,
    seed: u64,
) -> Result<PoSampleSet, CausalError> {
    if n_samples < 1 {
        return Err(CausalError::NoSamples);
    }
    let xm = check(model, x, a)?;
    let jac = model.scaler.log_jacobian();
    let samples = latent_draws(n_samples, seed)
        .into_iter()
        .map(|z| {
            let (y, lp) = ode_engine::decode_with_logdensity(&model.params, z, &xm, a, ode_cfg)
                .map_err(net_err)?;
            Ok((model.scaler.y_from_model(y), lp + jac))
        })
        .collect::<Result<_, CausalError>>()?;
    Ok(PoSampleSet {
        x: x.to_vec(),
        a,
        samples,
        seed,
    })
}

/// The `ŷ` values of [`sample_po`] without the density integral.
pub fn sample_po_values(
    model: &FlowModel,
    x: &[f64],
    a: u8,
    n_samples: usize,
    ode_cfg: &OdeConfig,
    seed: u64,
) -> Result<Vec<f64>, CausalError> {
    if n_samples < 1 {
        return Err(CausalError::NoSamples);
    }
    let xm = check(model, x, a)?;
    latent_draws(n_samples, seed)
        .into_iter()
        .map(|z| {
            let y = ode_engine::decode(&model.params, z, &xm, a, ode_cfg).map_err(net_err)?;
            Ok(model.scaler.y_from_model(y))
        })
        .collect()
}

/// Mean of `n_mc` decoded samples.
pub fn mean_po(
    model: &FlowModel,
    x: &[f64],
    a: u8,
    n_mc: usize,
    ode_cfg: &OdeConfig,
    seed: u64,
) -> Result<f64, CausalError> {
    let v = sample_po_values(model, x, a, n_mc, ode_cfg, seed)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Encodes the factual outcome under `a` and decodes it under `1 − a`.
pub fn predict_counterfactual(
    model: &FlowModel,
    y_a: f64,
    x: &[f64],
    a: u8,
    ode_cfg: &OdeConfig,
) -> Result<f64, CausalError> {
    transport(model, y_a, x, a, 1 - a.min(1), ode_cfg)
}

/// Latent `z` of a factual outcome, in model units.
pub fn abduct(
    model: &FlowModel,
    y: f64,
    x: &[f64],
    a: u8,
    ode_cfg: &OdeConfig,
) -> Result<f64, CausalError> {
    let xm = check(model, x, a)?;
    ode_engine::encode(&model.params, model.scaler.y_to_model(y), &xm, a, ode_cfg).map_err(net_err)
}

/// Encodes under `from` and decodes under `to`.
pub fn transport(
    model: &FlowModel,
    y: f64,
    x: &[f64],
    from: u8,
    to: u8,
    ode_cfg: &OdeConfig,
) -> Result<f64, CausalError> {
    if to > 1 {
        return Err(CausalError::Treatment(to));
    }
    let z = abduct(model, y, x, from, ode_cfg)?;
    let xm = model.scaler.x_to_model(x);
    let y_to = ode_engine::decode(&model.params, z, &xm, to, ode_cfg).map_err(net_err)?;
    Ok(model.scaler.y_from_model(y_to))
}

/// Difference of arm means over `n_mc` samples per arm. Both arms decode the
/// same latent draws.
pub fn estimate_cate(
    model: &FlowModel,
    x: &[f64],
    n_mc: usize,
    ode_cfg: &OdeConfig,
    seed: u64,
) -> Result<f64, CausalError> {
    Ok(mean_po(model, x, 1, n_mc, ode_cfg, seed)? - mean_po(model, x, 0, n_mc, ode_cfg, seed)?)
}

/// Index of the largest log density, first index on ties.
pub fn argmax_logp(samples: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        if best.is_none_or(|b| s.1 > samples[b].1) {
            best = Some(i);
        }
    }
    best
}

/// The most likely of `n_samples` decoded samples.
pub fn map_po(
    model: &FlowModel,
    x: &[f64],
    a: u8,
    n_samples: usize,
    ode_cfg: &OdeConfig,
    seed: u64,
) -> Result<f64, CausalError> {
    let set = sample_po(model, x, a, n_samples, ode_cfg, seed)?;
    let i = argmax_logp(&set.samples).ok_or(CausalError::NoSamples)?;
    Ok(set.samples[i].0)
}

/// `log p(y | x, a)` by encoding `y` and accumulating the divergence.
pub fn log_density(
    model: &FlowModel,
    y: f64,
    x: &[f64],
    a: u8,
    ode_cfg: &OdeConfig,
) -> Result<f64, CausalError> {
    let xm = check(model, x, a)?;
    let (_, lp) =
        ode_engine::encode_with_logdensity(&model.params, model.scaler.y_to_model(y), &xm, a, ode_cfg)
            .map_err(net_err)?;
    Ok(lp + model.scaler.log_jacobian())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode_engine::log_std_normal;
    use crate::scm_data::Scaler;
    use crate::velocity_net::{init, NetConfig, VelocityNetParams};

    fn zero_model(d_x: usize) -> FlowModel {
        FlowModel::unscaled(VelocityNetParams::zeroed(&NetConfig::new(d_x)).unwrap())
    }

    /// Random net that ignores `a`: the treatment row of every conditioning
    /// weight is zero and the second head copies the first.
    fn twin_heads(d_x: usize) -> FlowModel {
        let mut p = init(&NetConfig::new(d_x)).unwrap();
        let mut cond = vec![&mut p.film_scale.weight, &mut p.film_shift.weight];
        for b in &mut p.blocks {
            cond.push(&mut b.gate_c.weight);
            cond.push(&mut b.value_c.weight);
        }
        for w in cond {
            for c in 0..w.cols() {
                w.set(d_x, c, 0.0);
            }
        }
        for r in 0..p.proj.weight.rows() {
            let w = p.proj.weight.get(r, 0);
            p.proj.weight.set(r, 1, w);
        }
        p.proj.bias.set(0, 1, p.proj.bias.get(0, 0));
        FlowModel::unscaled(p)
    }

    #[test]
    fn zero_field_samples_are_the_draws() {
        let m = zero_model(2);
        let set = sample_po(&m, &[0.3, -1.0], 1, 2000, &OdeConfig::with_steps(8), 5).unwrap();
        let z = latent_draws(2000, 5);
        for ((y, lp), z) in set.samples.iter().zip(&z) {
            assert_eq!(*y, *z);
            assert!((lp - log_std_normal(*z)).abs() < 1e-12);
        }
        let mean = set.mean();
        let sd = (set.values().map(|v| (v - mean).powi(2)).sum::<f64>() / 2000.0).sqrt();
        assert!(mean.abs() < 0.1 && (sd - 1.0).abs() < 0.1);
    }

    #[test]
    fn sampling_is_seeded() {
        let m = FlowModel::unscaled(init(&NetConfig::new(2)).unwrap());
        let cfg = OdeConfig::with_steps(16);
        let a = sample_po(&m, &[0.1, 0.2], 0, 5, &cfg, 9).unwrap();
        assert_eq!(a, sample_po(&m, &[0.1, 0.2], 0, 5, &cfg, 9).unwrap());
        assert_ne!(a, sample_po(&m, &[0.1, 0.2], 0, 5, &cfg, 10).unwrap());
        let values = sample_po_values(&m, &[0.1, 0.2], 0, 5, &cfg, 9).unwrap();
        assert_eq!(values, a.values().collect::<Vec<_>>());
    }

    #[test]
    fn scaler_maps_samples_and_density() {
        let mut m = zero_model(1);
        m.scaler = Scaler {
            x_mean: vec![0.0],
            x_sd: vec![1.0],
            y_mean: 10.0,
            y_sd: 2.0,
        };
        let cfg = OdeConfig::with_steps(4);
        let set = sample_po(&m, &[0.0], 0, 3, &cfg, 1).unwrap();
        for ((y, lp), z) in set.samples.iter().zip(latent_draws(3, 1)) {
            assert!((y - (10.0 + 2.0 * z)).abs() < 1e-12);
            assert!((lp - (log_std_normal(z) - 2f64.ln())).abs() < 1e-12);
        }
        let lp = log_density(&m, 13.0, &[0.0], 1, &cfg).unwrap();
        assert!((lp - (log_std_normal(1.5) - 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn twin_heads_leave_counterfactual_unchanged() {
        let m = twin_heads(3);
        let cfg = OdeConfig::default();
        for y in [-2.0, 0.0, 0.7, 3.0] {
            let cf = predict_counterfactual(&m, y, &[0.5, -0.5, 1.0], 1, &cfg).unwrap();
            assert!((cf - y).abs() < 1e-6, "{y} -> {cf}");
        }
        let tau = estimate_cate(&m, &[0.5, -0.5, 1.0], 50, &cfg, 3).unwrap();
        assert_eq!(tau, 0.0);
    }

    #[test]
    fn counterfactual_roundtrip_and_no_intervention() {
        let m = FlowModel::unscaled(init(&NetConfig::new(2)).unwrap());
        let cfg = OdeConfig::default();
        let x = [0.4, -1.2];
        for y in [-1.5, 0.2, 2.5] {
            let there = predict_counterfactual(&m, y, &x, 0, &cfg).unwrap();
            let back = predict_counterfactual(&m, there, &x, 1, &cfg).unwrap();
            assert!((back - y).abs() < 2e-6);
            assert!((transport(&m, y, &x, 1, 1, &cfg).unwrap() - y).abs() < 1e-6);
        }
    }

    #[test]
    fn counterfactual_is_monotone() {
        let m = FlowModel::unscaled(init(&NetConfig::new(2)).unwrap());
        let cfg = OdeConfig::with_steps(32);
        let cf: Vec<f64> = (0..25)
            .map(|i| predict_counterfactual(&m, -3.0 + 0.25 * i as f64, &[1.0, 0.0], 0, &cfg).unwrap())
            .collect();
        assert!(cf.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn map_on_zero_field_picks_smallest_draw() {
        let m = zero_model(1);
        let cfg = OdeConfig::with_steps(4);
        let map = map_po(&m, &[0.0], 0, 100, &cfg, 7).unwrap();
        let best = latent_draws(100, 7)
            .into_iter()
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap();
        assert_eq!(map, best);
        let one = map_po(&m, &[0.0], 0, 1, &cfg, 7).unwrap();
        assert_eq!(one, latent_draws(1, 7)[0]);
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax_logp(&[(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)]), Some(1));
        assert_eq!(argmax_logp(&[]), None);
    }

    #[test]
    fn density_paths_agree() {
        let m = FlowModel::unscaled(init(&NetConfig::new(2)).unwrap());
        let cfg = OdeConfig::default();
        let x = [0.3, 0.9];
        let set = sample_po(&m, &x, 1, 4, &cfg, 2).unwrap();
        for (y, lp) in set.samples {
            assert!((log_density(&m, y, &x, 1, &cfg).unwrap() - lp).abs() < 1e-4);
        }
    }

    #[test]
    fn contract_errors() {
        let m = zero_model(2);
        let cfg = OdeConfig::default();
        assert!(matches!(estimate_cate(&m, &[0.0, 0.0], 0, &cfg, 0), Err(CausalError::NoSamples)));
        assert!(matches!(
            sample_po(&m, &[0.0], 0, 1, &cfg, 0),
            Err(CausalError::Dimension { expected: 2, got: 1 })
        ));
        assert!(matches!(log_density(&m, 0.0, &[0.0, 0.0], 2, &cfg), Err(CausalError::Treatment(2))));
    }

    #[test]
    fn row_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|r| row_seed(42, r)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_ne!(row_seed(1, 0), row_seed(2, 0));
    }
}
