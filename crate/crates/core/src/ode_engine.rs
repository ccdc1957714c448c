//! Fixed-step RK4 integration of the conditional flow.
//!
//! Encoding runs `dy/dt = v(y, t; x, a)` forward from `t = 0` (data) to
//! `t = 1` (latent); decoding runs the same field backward. Log densities are
//! obtained by carrying `ℓ` with `dℓ/dt = ∂v/∂y` as a second state component
//! through the same RK4 stages, so
//! `log p(y | x, a) = log N(z; 0, 1) + ∫₀¹ ∂v/∂y dt` along the path that
//! connects `y` and `z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::velocity_net::{ConditionedField, NetError, VelocityNetParams};

pub const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal log density.
pub fn log_std_normal(z: f64) -> f64 {
    -LOG_SQRT_2PI - 0.5 * z * z
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DivergenceMode {
    /// Central difference `(v(y + σ) − v(y − σ)) / 2σ`.
    ExactFd { sigma: f64 },
    /// Mean over Rademacher probes `ε` of `ε · (v(y + σε) − v(y)) / σ`.
    /// Probes are drawn from a stream seeded with `seed` at the start of
    /// every trajectory.
    Hutchinson { n_probes: usize, sigma: f64, seed: u64 },
}

impl Default for DivergenceMode {
    fn default() -> Self {
        Self::ExactFd { sigma: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub n_steps: usize,
    pub divergence: DivergenceMode,
    pub save_trajectory: bool,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            n_steps: 64,
            divergence: DivergenceMode::default(),
            save_trajectory: false,
        }
    }
}

impl OdeConfig {
    pub fn with_steps(n_steps: usize) -> Self {
        Self {
            n_steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        if self.n_steps < 1 {
            return Err(OdeError::Config("n_steps must be at least 1".into()));
        }
        let sigma = match self.divergence {
            DivergenceMode::ExactFd { sigma } => sigma,
            DivergenceMode::Hutchinson { n_probes, sigma, .. } => {
                if n_probes < 1 {
                    return Err(OdeError::Config("n_probes must be at least 1".into()));
                }
                sigma
            }
        };
        if !(sigma > 0.0) {
            return Err(OdeError::Config(format!("divergence sigma must be > 0, got {sigma}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeResult {
    pub y_end: f64,
    /// `∫₀¹ ∂v/∂y dt` along the path, oriented from `t = 0` to `t = 1`
    /// regardless of the direction of integration.
    pub logdet_integral: Option<f64>,
    /// `n_steps + 1` points in integration order.
    pub trajectory: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, thiserror::Error)]
pub enum OdeError {
    #[error("non-finite velocity at t={t}, y={y}")]
    NonFinite { t: f64, y: f64 },
    #[error("invalid ODE config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn step_n<const N: usize>(
    f: &mut impl FnMut([f64; N], f64) -> [f64; N],
    y: [f64; N],
    t: f64,
    h: f64,
) -> Result<[f64; N], OdeError> {
    let mut eval = |y: [f64; N], t: f64| {
        let k = f(y, t);
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(OdeError::NonFinite { t, y: y[0] })
        }
    };
    let offset = |k: &[f64; N], s: f64| {
        let mut out = y;
        for (o, ki) in out.iter_mut().zip(k) {
            *o += s * ki;
        }
        out
    };
    let k1 = eval(y, t)?;
    let k2 = eval(offset(&k1, 0.5 * h), t + 0.5 * h)?;
    let k3 = eval(offset(&k2, 0.5 * h), t + 0.5 * h)?;
    let k4 = eval(offset(&k3, h), t + h)?;
    let mut out = y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// One classical RK4 step of `dy/dt = f(y, t)`. Negative `h` integrates
/// backward in time.
pub fn rk4_step(
    mut f: impl FnMut(f64, f64) -> f64,
    y: f64,
    t: f64,
    h: f64,
) -> Result<f64, OdeError> {
    Ok(step_n(&mut |s: [f64; 1], t| [f(s[0], t)], [y], t, h)?[0])
}

fn integrate_n<const N: usize>(
    mut f: impl FnMut([f64; N], f64) -> [f64; N],
    y0: [f64; N],
    t0: f64,
    t1: f64,
    n_steps: usize,
    save: bool,
) -> Result<([f64; N], Option<Vec<(f64, f64)>>), OdeError> {
    if n_steps < 1 {
        return Err(OdeError::Config("n_steps must be at least 1".into()));
    }
    let span = t1 - t0;
    let h = span / n_steps as f64;
    let mut traj = save.then(|| {
        let mut v = Vec::with_capacity(n_steps + 1);
        v.push((t0, y0[0]));
        v
    });
    let mut y = y0;
    for k in 0..n_steps {
        let t = t0 + span * (k as f64 / n_steps as f64);
        y = step_n(&mut f, y, t, h)?;
        if let Some(tr) = traj.as_mut() {
            tr.push((t0 + span * ((k + 1) as f64 / n_steps as f64), y[0]));
        }
    }
    Ok((y, traj))
}

/// Integrates `dy/dt = f(y, t)` from `t0` to `t1` with `n_steps` equal steps.
pub fn integrate(
    mut f: impl FnMut(f64, f64) -> f64,
    y0: f64,
    t0: f64,
    t1: f64,
    n_steps: usize,
    save_trajectory: bool,
) -> Result<OdeResult, OdeError> {
    let (y, trajectory) =
        integrate_n(|s: [f64; 1], t| [f(s[0], t)], [y0], t0, t1, n_steps, save_trajectory)?;
    Ok(OdeResult {
        y_end: y[0],
        logdet_integral: None,
        trajectory,
    })
}

/// Evaluates `∂v/∂y` of a conditioned field according to `mode`.
struct DivergenceProbe {
    mode: DivergenceMode,
    rng: Option<ChaCha8Rng>,
}

impl DivergenceProbe {
    fn new(mode: DivergenceMode) -> Self {
        let rng = match mode {
            DivergenceMode::Hutchinson { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            DivergenceMode::ExactFd { .. } => None,
        };
        Self { mode, rng }
    }

    /// Returns `(v(y, t), ∂v/∂y)`.
    fn velocity_and_divergence(&mut self, field: &mut ConditionedField, y: f64, t: f64) -> (f64, f64) {
        let v = field.eval(y, t);
        let div = match self.mode {
            DivergenceMode::ExactFd { sigma } => {
                (field.eval(y + sigma, t) - field.eval(y - sigma, t)) / (2.0 * sigma)
            }
            DivergenceMode::Hutchinson { n_probes, sigma, .. } => {
                let rng = self.rng.as_mut().expect("seeded for hutchinson");
                let mut acc = 0.0;
                for _ in 0..n_probes {
                    let eps = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    acc += eps * (field.eval(y + sigma * eps, t) - v) / sigma;
                }
                acc / n_probes as f64
            }
        };
        (v, div)
    }
}

pub fn divergence(
    params: &VelocityNetParams,
    y: f64,
    t: f64,
    x: &[f64],
    a: u8,
    mode: DivergenceMode,
) -> Result<f64, OdeError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(NetError::TimeDomain(t).into());
    }
    let mut field = ConditionedField::new(params, x, a)?;
    Ok(DivergenceProbe::new(mode).velocity_and_divergence(&mut field, y, t).1)
}

fn flow(
    params: &VelocityNetParams,
    y0: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
    (t0, t1): (f64, f64),
) -> Result<OdeResult, OdeError> {
    cfg.validate()?;
    let mut field = ConditionedField::new(params, x, a)?;
    integrate(|y, t| field.eval(y, t), y0, t0, t1, cfg.n_steps, cfg.save_trajectory)
}

fn flow_with_divergence(
    params: &VelocityNetParams,
    y0: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
    (t0, t1): (f64, f64),
) -> Result<OdeResult, OdeError> {
    cfg.validate()?;
    let mut field = ConditionedField::new(params, x, a)?;
    let mut probe = DivergenceProbe::new(cfg.divergence);
    let (end, trajectory) = integrate_n(
        |s: [f64; 2], t| {
            let (v, div) = probe.velocity_and_divergence(&mut field, s[0], t);
            [v, div]
        },
        [y0, 0.0],
        t0,
        t1,
        cfg.n_steps,
        cfg.save_trajectory,
    )?;
    // ℓ accumulated ∫_{t0}^{t1}; reorient to ∫₀¹.
    let integral = if t1 >= t0 { end[1] } else { -end[1] };
    Ok(OdeResult {
        y_end: end[0],
        logdet_integral: Some(integral),
        trajectory,
    })
}

/// Forward map `y(0) = y_a ↦ y(1) = z`.
pub fn encode_result(
    params: &VelocityNetParams,
    y_a: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<OdeResult, OdeError> {
    flow(params, y_a, x, a, cfg, (0.0, 1.0))
}

pub fn encode(
    params: &VelocityNetParams,
    y_a: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<f64, OdeError> {
    Ok(encode_result(params, y_a, x, a, cfg)?.y_end)
}

/// Reverse map `y(1) = z ↦ y(0)`.
pub fn decode_result(
    params: &VelocityNetParams,
    z: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<OdeResult, OdeError> {
    flow(params, z, x, a, cfg, (1.0, 0.0))
}

pub fn decode(
    params: &VelocityNetParams,
    z: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<f64, OdeError> {
    Ok(decode_result(params, z, x, a, cfg)?.y_end)
}

/// Decodes `z` and returns `(ŷ, log p(ŷ | x, a))`.
pub fn decode_with_logdensity(
    params: &VelocityNetParams,
    z: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<(f64, f64), OdeError> {
    let r = flow_with_divergence(params, z, x, a, cfg, (1.0, 0.0))?;
    let integral = r.logdet_integral.expect("divergence tracked");
    Ok((r.y_end, log_std_normal(z) + integral))
}

/// Encodes `y` and returns `(z, log p(y | x, a))`, accumulating the
/// divergence along the forward path.
pub fn encode_with_logdensity(
    params: &VelocityNetParams,
    y: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<(f64, f64), OdeError> {
    let r = flow_with_divergence(params, y, x, a, cfg, (0.0, 1.0))?;
    let integral = r.logdet_integral.expect("divergence tracked");
    Ok((r.y_end, log_std_normal(r.y_end) + integral))
}

pub fn decode_with_logdensity_result(
    params: &VelocityNetParams,
    z: f64,
    x: &[f64],
    a: u8,
    cfg: &OdeConfig,
) -> Result<OdeResult, OdeError> {
    flow_with_divergence(params, z, x, a, cfg, (1.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Matrix;
    use crate::velocity_net::{init, NetConfig};

    /// Network whose every output is `slope·y + c`: only the FiLM shift bias
    /// and embedding carry weight, the blocks are zero, and one projection
    /// weight reads the first hidden unit.
    fn affine_field(d_x: usize, slope: f64, c: f64) -> VelocityNetParams {
        let mut p = VelocityNetParams::zeroed(&NetConfig::new(d_x)).unwrap();
        p.embed.weight.set(0, 0, 1.0);
        p.film_scale.bias.set(0, 0, 1.0);
        // the two residual blocks each halve the hidden state
        p.proj.weight.set(0, 0, 4.0 * slope);
        p.proj.weight.set(0, 1, 4.0 * slope);
        p.proj.bias = Matrix::row_vector(vec![c, c]);
        p
    }

    #[test]
    fn rk4_zero_field() {
        assert_eq!(rk4_step(|_, _| 0.0, 1.25, 0.3, 0.1).unwrap(), 1.25);
    }

    #[test]
    fn rk4_exponential() {
        let r = integrate(|y, _| y, 1.0, 0.0, 1.0, 32, false).unwrap();
        assert!((r.y_end - std::f64::consts::E).abs() < 1e-6);
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |n| (integrate(|y, _| y, 1.0, 0.0, 1.0, n, false).unwrap().y_end - 1f64.exp()).abs();
        let ratio = err(16) / err(32);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk4_reports_non_finite() {
        let err = rk4_step(|_, _| f64::NAN, 0.5, 0.25, 0.1).unwrap_err();
        assert!(matches!(err, OdeError::NonFinite { t, y } if t == 0.25 && y == 0.5));
    }

    #[test]
    fn trajectory_has_all_points() {
        let r = integrate(|_, t| t, 0.0, 1.0, 0.0, 8, true).unwrap();
        let tr = r.trajectory.unwrap();
        assert_eq!(tr.len(), 9);
        assert!(tr.windows(2).all(|w| w[1].0 < w[0].0));
        assert_eq!(tr[8].0, 0.0);
    }

    #[test]
    fn crafted_field_is_affine() {
        let p = affine_field(2, 3.0, 0.5);
        for y in [-1.0, 0.0, 2.5] {
            let v = crate::velocity_net::forward(&p, y, 0.4, &[0.3, -0.2], 1).unwrap();
            assert!((v - (3.0 * y + 0.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_net_is_identity_flow() {
        let p = VelocityNetParams::zeroed(&NetConfig::new(2)).unwrap();
        let cfg = OdeConfig::default();
        assert_eq!(encode(&p, 1.7, &[0.0, 1.0], 0, &cfg).unwrap(), 1.7);
        assert_eq!(decode(&p, -0.4, &[0.0, 1.0], 1, &cfg).unwrap(), -0.4);
        let (y, lp) = decode_with_logdensity(&p, 0.0, &[0.0, 1.0], 1, &cfg).unwrap();
        assert_eq!(y, 0.0);
        assert!((lp + 0.918939).abs() < 1e-6);
    }

    #[test]
    fn constant_field_shifts_by_c() {
        let p = affine_field(1, 0.0, 0.75);
        let z = encode(&p, 1.0, &[0.2], 0, &OdeConfig::default()).unwrap();
        assert!((z - 1.75).abs() < 1e-12);
        assert!(divergence(&p, 0.3, 0.5, &[0.2], 0, DivergenceMode::default()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn linear_field_divergence_both_modes() {
        let p = affine_field(2, 3.0, 0.0);
        let modes = [
            DivergenceMode::ExactFd { sigma: 1e-4 },
            DivergenceMode::Hutchinson {
                n_probes: 16,
                sigma: 1e-4,
                seed: 5,
            },
        ];
        for mode in modes {
            let d = divergence(&p, 0.7, 0.2, &[1.0, -1.0], 0, mode).unwrap();
            assert!((d - 3.0).abs() < 1e-3, "{mode:?}: {d}");
        }
    }

    #[test]
    fn linear_flow_logdensity_matches_closed_form() {
        // v = c·y has divergence c everywhere
        let c = 0.8;
        let p = affine_field(1, c, 0.0);
        let cfg = OdeConfig::default();
        for z in [-1.5, 0.0, 0.4] {
            let (y, lp) = decode_with_logdensity(&p, z, &[0.0], 1, &cfg).unwrap();
            assert!((y - z * (-c).exp()).abs() < 1e-9);
            assert!((lp - (log_std_normal(z) + c)).abs() < 1e-8);
            let (z_back, lp_fwd) = encode_with_logdensity(&p, y, &[0.0], 1, &cfg).unwrap();
            assert!((z_back - z).abs() < 1e-9);
            assert!((lp_fwd - lp).abs() < 1e-8);
        }
    }

    #[test]
    fn encode_decode_roundtrip_random_net() {
        let p = init(&NetConfig::new(3)).unwrap();
        let cfg = OdeConfig::default();
        let x = [0.5, -1.0, 0.25];
        for y in [-2.0, -0.3, 0.0, 1.1, 2.4] {
            let z = encode(&p, y, &x, 1, &cfg).unwrap();
            assert!((decode(&p, z, &x, 1, &cfg).unwrap() - y).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_is_monotone_in_z() {
        let p = init(&NetConfig::new(2)).unwrap();
        let cfg = OdeConfig::default();
        let ys: Vec<f64> = (0..41)
            .map(|k| decode(&p, -4.0 + 0.2 * k as f64, &[0.3, 0.1], 0, &cfg).unwrap())
            .collect();
        assert!(ys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invalid_configs() {
        let p = init(&NetConfig::new(1)).unwrap();
        let cfg = OdeConfig::with_steps(0);
        assert!(matches!(encode(&p, 0.0, &[0.0], 0, &cfg), Err(OdeError::Config(_))));
        let cfg = OdeConfig {
            divergence: DivergenceMode::ExactFd { sigma: 0.0 },
            ..OdeConfig::default()
        };
        assert!(matches!(
            decode_with_logdensity(&p, 0.0, &[0.0], 0, &cfg),
            Err(OdeError::Config(_))
        ));
        assert!(divergence(&p, 0.0, 1.5, &[0.0], 0, DivergenceMode::default()).is_err());
    }
}
