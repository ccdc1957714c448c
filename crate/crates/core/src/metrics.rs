//! Evaluation metrics for potential-outcome models.
//!
//! Ground truth on synthetic data is Gaussian: `Y(a) | x ~ N(μ_a(x), 1)`.
//! Point predictions of a potential outcome are the mean of `n_mc` decoded
//! samples; the MAP variant picks the most likely of the same samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::causal_api::{self, argmax_logp, latent_draws, row_seed, CausalError};
use crate::ode_engine::{log_std_normal, OdeConfig};
use crate::scm_data::CausalDataset;
use crate::velocity_net::FlowModel;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("non-finite input")]
    NonFinite,
    #[error("need at least 2 rows, got {0}")]
    TooFew(usize),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// What the evaluators need from a model. Implemented by [`FlowModel`] and by
/// test doubles.
pub trait PoModel {
    /// `n` samples `(ŷ, log p)` of `Y(a) | x`, deterministic in `seed`.
    fn sample(&self, x: &[f64], a: u8, n: usize, ode: &OdeConfig, seed: u64)
        -> Result<Vec<(f64, f64)>, CausalError>;
    fn counterfactual(&self, y: f64, x: &[f64], a: u8, ode: &OdeConfig) -> Result<f64, CausalError>;
    /// Latent noise recovered from a factual row.
    fn latent(&self, y: f64, x: &[f64], a: u8, ode: &OdeConfig) -> Result<f64, CausalError>;
    fn id(&self) -> String;
}

impl PoModel for FlowModel {
    fn sample(
        &self,
        x: &[f64],
        a: u8,
        n: usize,
        ode: &OdeConfig,
        seed: u64,
    ) -> Result<Vec<(f64, f64)>, CausalError> {
        Ok(causal_api::sample_po(self, x, a, n, ode, seed)?.samples)
    }

    fn counterfactual(&self, y: f64, x: &[f64], a: u8, ode: &OdeConfig) -> Result<f64, CausalError> {
        causal_api::predict_counterfactual(self, y, x, a, ode)
    }

    fn latent(&self, y: f64, x: &[f64], a: u8, ode: &OdeConfig) -> Result<f64, CausalError> {
        causal_api::abduct(self, y, x, a, ode)
    }

    /// SHA-256 of the serialized model.
    fn id(&self) -> String {
        let json = self.to_json().unwrap_or_default();
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Square root of the mean squared CATE error.
pub fn pehe(tau_hat: &[f64], tau: &[f64]) -> Result<f64, MetricError> {
    rmse(tau_hat, tau)
}

fn sorted(v: &[f64]) -> Result<Vec<f64>, MetricError> {
    if v.is_empty() {
        return Err(MetricError::Empty);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Wasserstein-1 distance between two empirical distributions, as the
/// integral of `|F_u⁻¹(q) − F_v⁻¹(q)|` over `q ∈ [0, 1]`.
pub fn wasserstein1(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    let (u, v) = (sorted(u)?, sorted(v)?);
    let (n, m) = (u.len(), v.len());
    if n == m {
        return Ok(u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64);
    }
    // Quantile levels in units of 1/(n·m): u steps at multiples of m, v at multiples of n.
    let (mut i, mut j, mut q) = (0, 0, 0usize);
    let mut total = 0.0;
    while i < n && j < m {
        let (next_u, next_v) = ((i + 1) * m, (j + 1) * n);
        let step = next_u.min(next_v);
        total += (step - q) as f64 * (u[i] - v[j]).abs();
        q = step;
        if next_u == step {
            i += 1;
        }
        if next_v == step {
            j += 1;
        }
    }
    Ok(total / (n * m) as f64)
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

/// One evaluation point with its true conditional mean.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow {
    pub x: Vec<f64>,
    pub a: u8,
    pub mu: f64,
}

/// `E[log p_θ(ŷ | x, a) − log N(ŷ; μ, 1)]` with `ŷ ~ p_θ`, averaged over rows.
/// Row `i` draws from `row_seed(seed, i)`.
pub fn kl_vs_gaussian_truth(
    model: &impl PoModel,
    rows: &[TruthRow],
    n_mc: usize,
    ode: &OdeConfig,
    seed: u64,
) -> Result<Estimate, MetricError> {
    if rows.is_empty() {
        return Err(MetricError::Empty);
    }
    if n_mc < 2 {
        return Err(MetricError::TooFew(n_mc));
    }
    let (mut sum, mut var_sum) = (0.0, 0.0);
    for (i, r) in rows.iter().enumerate() {
        let d: Vec<f64> = model
            .sample(&r.x, r.a, n_mc, ode, row_seed(seed, i as u64))?
            .into_iter()
            .map(|(y, lp)| lp - log_std_normal(y - r.mu))
            .collect();
        let mean = d.iter().sum::<f64>() / n_mc as f64;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_mc - 1) as f64;
        sum += mean;
        var_sum += var / n_mc as f64;
    }
    let r = rows.len() as f64;
    Ok(Estimate {
        value: sum / r,
        std_err: var_sum.sqrt() / r,
    })
}

/// Point in the joint space `(z, x, a)` used by the latent-invariance test.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPoint {
    pub z: f64,
    pub x: Vec<f64>,
    pub a: u8,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Half the median pairwise distance, or 1 if that is zero.
fn half_median(points: &[&[f64]]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(euclid(points[i], points[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let med = if k % 2 == 1 { d[k / 2] } else { 0.5 * (d[k / 2 - 1] + d[k / 2]) };
    if med > 0.0 {
        0.5 * med
    } else {
        1.0
    }
}

fn rbf(d: f64, h: f64) -> f64 {
    (-(d * d) / (2.0 * h * h)).exp()
}

/// Unbiased MMD² U-statistic between paired samples `u` and `v` under the
/// product kernel `k_Z · k_X · 1[a = a′]`. RBF bandwidths are half the median
/// pairwise distance over the union of both samples.
pub fn mmd2_unbiased(u: &[KernelPoint], v: &[KernelPoint]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::Length(u.len(), v.len()));
    }
    let n = u.len();
    if n < 2 {
        return Err(MetricError::TooFew(n));
    }
    let pooled: Vec<&KernelPoint> = u.iter().chain(v).collect();
    let zs: Vec<[f64; 1]> = pooled.iter().map(|p| [p.z]).collect();
    let h_z = half_median(&zs.iter().map(|z| &z[..]).collect::<Vec<_>>());
    let h_x = half_median(&pooled.iter().map(|p| &p.x[..]).collect::<Vec<_>>());
    let k = |p: &KernelPoint, q: &KernelPoint| {
        if p.a != q.a {
            0.0
        } else {
            rbf((p.z - q.z).abs(), h_z) * rbf(euclid(&p.x, &q.x), h_x)
        }
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += k(&u[i], &u[j]) + k(&v[i], &v[j]) - k(&u[i], &v[j]) - k(&u[j], &v[i]);
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A3Result {
    pub mmd_model: f64,
    pub mmd_truth_baseline: f64,
}

/// Compares recovered latents `(z_i, x_i, a_i)` against `(z′_i, x_i, a_i)`
/// with `z′ ~ N(0, 1)`, and reports the same statistic for two independent
/// standard normal draws as a baseline.
pub fn mmd_a3_test(
    model: &impl PoModel,
    ds: &CausalDataset,
    ode: &OdeConfig,
    seed: u64,
) -> Result<A3Result, MetricError> {
    let n = ds.n();
    if n < 2 {
        return Err(MetricError::TooFew(n));
    }
    let z = (0..n)
        .map(|i| model.latent(ds.y[i], ds.x_row(i), ds.a[i], ode))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let z2: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let points = |zs: &[f64]| -> Vec<KernelPoint> {
        zs.iter()
            .enumerate()
            .map(|(i, &z)| KernelPoint {
                z,
                x: ds.x_row(i).to_vec(),
                a: ds.a[i],
            })
            .collect()
    };
    Ok(A3Result {
        mmd_model: mmd2_unbiased(&points(&z), &points(&z1))?,
        mmd_truth_baseline: mmd2_unbiased(&points(&z1), &points(&z2))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ode: OdeConfig,
    pub seed: u64,
    /// Samples per row and arm for point, MAP and W1 estimates.
    pub n_mc: usize,
    pub kl_n_mc: usize,
    /// Leading rows used for the KL estimate; 0 skips it.
    pub kl_rows: usize,
    /// Rows of each split used; `None` evaluates all rows.
    pub max_rows: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ode: OdeConfig::default(),
            seed: 0,
            n_mc: causal_api::DEFAULT_N_MC,
            kl_n_mc: 256,
            kl_rows: 64,
            max_rows: Some(200),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    #[serde(rename = "in")]
    pub in_sample: Option<f64>,
    #[serde(rename = "out")]
    pub out_sample: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub model_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: ReportMeta,
    pub metrics: BTreeMap<String, MetricValue>,
}

pub const METRIC_NAMES: [&str; 10] = [
    "factual_rmse",
    "po_rmse",
    "map_rmse",
    "sqrt_pehe",
    "kl",
    "w1_a0",
    "w1_a1",
    "cf_rmse",
    "mmd_a3",
    "mmd_a3_baseline",
];

impl MetricsReport {
    pub fn get(&self, name: &str) -> MetricValue {
        self.metrics.get(name).copied().unwrap_or_default()
    }

    pub fn to_json(&self) -> Result<String, MetricError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self, MetricError> {
        Ok(serde_json::from_str(text)?)
    }

    /// `metric,in,out`; absent values are empty fields.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        let mut s = String::from("metric,in,out\n");
        for (name, v) in &self.metrics {
            let _ = writeln!(s, "{name},{},{}", cell(v.in_sample), cell(v.out_sample));
        }
        s
    }

    pub fn write(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<(), MetricError> {
        std::fs::write(json_path, self.to_json()?)?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.metrics
            .values()
            .flat_map(|v| [v.in_sample, v.out_sample])
            .flatten()
            .all(f64::is_finite)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn rmse_opt(pred: &[f64], truth: &[f64]) -> Option<f64> {
    rmse(pred, truth).ok()
}

/// Metrics of one split.
pub fn evaluate_split(
    model: &impl PoModel,
    ds: &CausalDataset,
    cfg: &EvalConfig,
) -> Result<BTreeMap<&'static str, Option<f64>>, MetricError> {
    let n = cfg.max_rows.map_or(ds.n(), |m| m.min(ds.n()));
    if n == 0 {
        return Err(MetricError::Empty);
    }
    let ds = ds.subset(&(0..n).collect::<Vec<_>>());
    let has_mu = ds.mu0.is_some() && ds.mu1.is_some();

    let (mut fact_pred, mut fact_true) = (Vec::new(), Vec::new());
    let (mut po_pred, mut map_pred, mut po_true) = (Vec::new(), Vec::new(), Vec::new());
    let (mut tau_hat, mut tau) = (Vec::new(), Vec::new());
    let mut w1 = [Vec::new(), Vec::new()];
    let (mut cf_pred, mut cf_true) = (Vec::new(), Vec::new());
    for i in 0..n {
        let x = ds.x_row(i);
        let seed = row_seed(cfg.seed, i as u64);
        let mut means = [0.0; 2];
        for arm in 0..2u8 {
            let s = model.sample(x, arm, cfg.n_mc, &cfg.ode, seed)?;
            let values: Vec<f64> = s.iter().map(|p| p.0).collect();
            means[arm as usize] = mean(&values).ok_or(MetricError::Empty)?;
            if let Some(mu) = ds.mu(i, arm) {
                po_pred.push(means[arm as usize]);
                map_pred.push(s[argmax_logp(&s).ok_or(MetricError::Empty)?].0);
                po_true.push(mu);
                let truth: Vec<f64> = latent_draws(cfg.n_mc, row_seed(seed, 1 + u64::from(arm)))
                    .into_iter()
                    .map(|e| mu + e)
                    .collect();
                w1[arm as usize].push(wasserstein1(&values, &truth)?);
            }
        }
        fact_pred.push(means[ds.a[i] as usize]);
        fact_true.push(ds.y[i]);
        if has_mu {
            tau_hat.push(means[1] - means[0]);
            tau.push(ds.mu(i, 1).unwrap_or_default() - ds.mu(i, 0).unwrap_or_default());
        }
        if let Some(ycf) = &ds.ycf {
            cf_pred.push(model.counterfactual(ds.y[i], x, ds.a[i], &cfg.ode)?);
            cf_true.push(ycf[i]);
        }
    }

    let kl = if has_mu && cfg.kl_rows > 0 {
        let rows: Vec<TruthRow> = (0..n.min(cfg.kl_rows))
            .map(|i| TruthRow {
                x: ds.x_row(i).to_vec(),
                a: ds.a[i],
                mu: ds.mu(i, ds.a[i]).unwrap_or_default(),
            })
            .collect();
        Some(kl_vs_gaussian_truth(model, &rows, cfg.kl_n_mc, &cfg.ode, cfg.seed)?.value)
    } else {
        None
    };
    let a3 = if n >= 2 {
        Some(mmd_a3_test(model, &ds, &cfg.ode, cfg.seed)?)
    } else {
        None
    };

    Ok(BTreeMap::from([
        ("factual_rmse", rmse_opt(&fact_pred, &fact_true)),
        ("po_rmse", rmse_opt(&po_pred, &po_true)),
        ("map_rmse", rmse_opt(&map_pred, &po_true)),
        ("sqrt_pehe", pehe(&tau_hat, &tau).ok()),
        ("kl", kl),
        ("w1_a0", mean(&w1[0])),
        ("w1_a1", mean(&w1[1])),
        ("cf_rmse", rmse_opt(&cf_pred, &cf_true)),
        ("mmd_a3", a3.map(|r| r.mmd_model)),
        ("mmd_a3_baseline", a3.map(|r| r.mmd_truth_baseline)),
    ]))
}

/// In-sample metrics on `train_ds` and out-of-sample metrics on `test_ds`.
/// Metrics whose ground truth is missing are reported as absent.
pub fn evaluate_all(
    model: &impl PoModel,
    train_ds: &CausalDataset,
    test_ds: &CausalDataset,
    cfg: &EvalConfig,
) -> Result<MetricsReport, MetricError> {
    let ins = evaluate_split(model, train_ds, cfg)?;
    let outs = evaluate_split(model, test_ds, cfg)?;
    let metrics = METRIC_NAMES
        .iter()
        .map(|&name| {
            let v = MetricValue {
                in_sample: ins.get(name).copied().flatten(),
                out_sample: outs.get(name).copied().flatten(),
            };
            (name.to_owned(), v)
        })
        .collect();
    Ok(MetricsReport {
        meta: ReportMeta {
            n_train: train_ds.n(),
            n_test: test_ds.n(),
            seed: cfg.seed,
            model_id: model.id(),
        },
        metrics,
    })
}
