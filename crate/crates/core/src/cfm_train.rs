//! Conditional flow-matching training.
//!
//! Each iteration draws a minibatch of factual rows `(y0, x, a)` with
//! replacement, a base sample `y1 ~ N(0, 1)` and a time `t ~ U[0, 1]` per row,
//! and regresses `v(φ_t, t; x, a)` onto the straight-line velocity
//! `y1 − y0`, where `φ_t = (1 − t)·y0 + t·y1`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kvfile::{KvError, KvMap};
use crate::numkit::{Gradients, Matrix, NumError, ParamId, Tape, Var};
use crate::scm_data::{fit_propensity, CausalDataset, DataError, PropensityModel};
use crate::velocity_net::{
    forward_tape, init, register_params, NetConfig, NetError, VelocityNetParams,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite loss at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(1 − t)·y0 + t·y1`.
pub fn interpolant(y0: f64, y1: f64, t: f64) -> f64 {
    (1.0 - t) * y0 + t * y1
}

/// Time derivative of [`interpolant`], constant in `t`.
pub fn reference_velocity(y0: f64, y1: f64) -> f64 {
    y1 - y0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iters: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub ipw: bool,
    pub seed: u64,
    pub loss_log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 200,
            max_iters: 1000,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            ipw: false,
            seed: 0,
            loss_log_every: 1,
        }
    }
}

const TRAIN_KEYS: [&str; 9] = [
    "batch_size",
    "max_iters",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "ipw",
    "seed",
    "loss_log_every",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 1 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.loss_log_every < 1 {
            return Err(TrainError::Config("loss_log_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format; absent keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let kv = KvMap::parse(text)?;
        kv.restrict(&TRAIN_KEYS)?;
        let d = Self::default();
        let cfg = Self {
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_iters: kv.get_or("max_iters", d.max_iters)?,
            lr: kv.get_or("lr", d.lr)?,
            adam_beta1: kv.get_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: kv.get_or("adam_beta2", d.adam_beta2)?,
            adam_eps: kv.get_or("adam_eps", d.adam_eps)?,
            ipw: kv.get_bool("ipw")?.unwrap_or(d.ipw),
            seed: kv.get_or("seed", d.seed)?,
            loss_log_every: kv.get_or("loss_log_every", d.loss_log_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "batch_size = {}\nmax_iters = {}\nlr = {:?}\nadam_beta1 = {:?}\nadam_beta2 = {:?}\n\
             adam_eps = {:?}\nipw = {}\nseed = {}\nloss_log_every = {}\n",
            self.batch_size,
            self.max_iters,
            self.lr,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
            self.ipw,
            self.seed,
            self.loss_log_every
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub loss_history: Vec<(usize, f64)>,
    pub final_loss: f64,
    pub iters_run: usize,
    pub wall_time: f64,
}

impl TrainReport {
    pub fn loss_at(&self, iter: usize) -> Option<f64> {
        self.loss_history.iter().find(|(i, _)| *i == iter).map(|(_, l)| *l)
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iter,loss\n");
        for (i, l) in &self.loss_history {
            let _ = writeln!(s, "{i},{l:?}");
        }
        s
    }

    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        std::fs::write(path, self.loss_csv())?;
        Ok(())
    }
}

/// Factual rows of one minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub y: Vec<f64>,
    pub x: Matrix,
    pub a: Vec<u8>,
}

impl Batch {
    pub fn from_rows(ds: &CausalDataset, idx: &[usize]) -> Self {
        Self {
            y: idx.iter().map(|&i| ds.y[i]).collect(),
            x: ds.x.select_rows(idx),
            a: idx.iter().map(|&i| ds.a[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Loss value with the tape that produced it.
pub struct LossEval {
    pub value: f64,
    pub tape: Tape,
    pub root: Var,
}

impl LossEval {
    pub fn gradients(&self) -> Result<Gradients, NumError> {
        self.tape.backward(self.root)
    }
}

/// Weighted mean of `(v(φ_t, t; x, a) − (y1 − y0))²` over the batch.
pub fn cfm_loss(
    params: &VelocityNetParams,
    batch: &Batch,
    noise: &[f64],
    ts: &[f64],
    weights: Option<&[f64]>,
) -> Result<LossEval, TrainError> {
    let n = batch.len();
    if n == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if noise.len() != n || ts.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(TrainError::Config("noise, times and weights must match the batch".into()));
    }
    let phi: Vec<f64> = (0..n).map(|i| interpolant(batch.y[i], noise[i], ts[i])).collect();
    let neg_target: Vec<f64> = (0..n)
        .map(|i| -reference_velocity(batch.y[i], noise[i]))
        .collect();

    let mut tape = Tape::new();
    let vars = register_params(params, &mut tape);
    let v = forward_tape(params, &mut tape, &vars, &phi, ts, &batch.x, &batch.a)?;
    let target = tape.constant(Matrix::column(neg_target));
    let resid = tape.add(v, target)?;
    let sq = tape.square(resid);
    let w = tape.constant(Matrix::column(
        weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec),
    ));
    let weighted = tape.multiply(sq, w)?;
    let root = tape.mean(weighted)?;
    Ok(LossEval {
        value: tape.scalar(root)?,
        tape,
        root,
    })
}

/// `a/w(x) + (1 − a)/(1 − w(x))` per row.
pub fn ipw_weights(ds: &CausalDataset, model: &PropensityModel) -> Vec<f64> {
    (0..ds.n())
        .map(|i| {
            let w = model.predict(ds.x_row(i));
            if ds.a[i] == 1 {
                1.0 / w
            } else {
                1.0 / (1.0 - w)
            }
        })
        .collect()
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(params: &VelocityNetParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Matrix> = params
            .named_tensors()
            .iter()
            .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut VelocityNetParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            let Some(g) = grads.get(&ParamId(i)) else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, (&gk, pk)) in g.data().iter().zip(p.data_mut()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *pk -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Trains a freshly initialised network on `ds`, which should already be in
/// model units.
pub fn train(
    ds: &CausalDataset,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
) -> Result<(VelocityNetParams, TrainReport), TrainError> {
    train_from(init(net_cfg)?, ds, train_cfg)
}

pub fn train_from(
    mut params: VelocityNetParams,
    ds: &CausalDataset,
    cfg: &TrainConfig,
) -> Result<(VelocityNetParams, TrainReport), TrainError> {
    cfg.validate()?;
    if ds.n() == 0 {
        return Err(TrainError::EmptyBatch);
    }
    if ds.d_x() != params.config.d_x {
        return Err(NetError::Dimension {
            expected: params.config.d_x,
            got: ds.d_x(),
        }
        .into());
    }
    let started = Instant::now();
    let row_weights = if cfg.ipw {
        Some(ipw_weights(ds, &fit_propensity(ds)?))
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&params, cfg);
    let mut history = Vec::new();
    let mut last = f64::NAN;
    for iter in 1..=cfg.max_iters {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..ds.n())).collect();
        let ts: Vec<f64> = (0..cfg.batch_size).map(|_| rng.random::<f64>()).collect();
        let noise: Vec<f64> = (0..cfg.batch_size)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let batch = Batch::from_rows(ds, &idx);
        let w: Option<Vec<f64>> = row_weights
            .as_ref()
            .map(|rw| idx.iter().map(|&i| rw[i]).collect());

        let eval = cfm_loss(&params, &batch, &noise, &ts, w.as_deref())?;
        if !eval.value.is_finite() {
            return Err(TrainError::NonFinite { iter });
        }
        let grads = eval.gradients()?;
        adam.step(&mut params, &grads, cfg.lr);
        if !params.is_finite() {
            return Err(TrainError::NonFinite { iter });
        }
        last = eval.value;
        if iter == 1 || iter % cfg.loss_log_every == 0 || iter == cfg.max_iters {
            history.push((iter, eval.value));
        }
    }
    Ok((
        params,
        TrainReport {
            loss_history: history,
            final_loss: last,
            iters_run: cfg.max_iters,
            wall_time: started.elapsed().as_secs_f64(),
        },
    ))
}
