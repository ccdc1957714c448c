use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::numkit::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeEncoding {
    /// `t` appended to the conditioning vector as one extra feature.
    ScalarAppend,
    /// `sin(kπt), cos(kπt)` for `k = 1..=frequencies`.
    Sinusoidal { frequencies: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub d_x: usize,
    pub hidden_dim: usize,
    pub n_res_blocks: usize,
    pub time_encoding: TimeEncoding,
    pub init_seed: u64,
}

pub const N_RES_BLOCKS: usize = 2;

impl NetConfig {
    /// Hidden width equal to the width of `(x, a)`.
    pub fn new(d_x: usize) -> Self {
        Self {
            d_x,
            hidden_dim: d_x + 1,
            n_res_blocks: N_RES_BLOCKS,
            time_encoding: TimeEncoding::ScalarAppend,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.d_x == 0 || self.hidden_dim == 0 {
            return Err(NetError::Config(format!(
                "d_x and hidden_dim must be positive (got {}, {})",
                self.d_x, self.hidden_dim
            )));
        }
        if self.n_res_blocks != N_RES_BLOCKS {
            return Err(NetError::Config(format!(
                "n_res_blocks is fixed at {N_RES_BLOCKS}, got {}",
                self.n_res_blocks
            )));
        }
        if let TimeEncoding::Sinusoidal { frequencies: 0 } = self.time_encoding {
            return Err(NetError::Config("sinusoidal encoding needs at least one frequency".into()));
        }
        Ok(())
    }

    pub fn time_dim(&self) -> usize {
        match self.time_encoding {
            TimeEncoding::ScalarAppend => 1,
            TimeEncoding::Sinusoidal { frequencies } => 2 * frequencies,
        }
    }

    /// Width of the conditioning vector `(x, a, enc(t))`.
    pub fn cond_dim(&self) -> usize {
        self.d_x + 1 + self.time_dim()
    }

    pub fn encode_time(&self, t: f64, out: &mut Vec<f64>) {
        match self.time_encoding {
            TimeEncoding::ScalarAppend => out.push(t),
            TimeEncoding::Sinusoidal { frequencies } => {
                for k in 1..=frequencies {
                    let w = k as f64 * std::f64::consts::PI * t;
                    out.push(w.sin());
                    out.push(w.cos());
                }
            }
        }
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (c, h) = (self.cond_dim(), self.hidden_dim);
        let embed = 2 * h;
        let film = 2 * (c * h + h);
        let branch = (c * h + h) + h * h + (h * h + h);
        let proj = 2 * h + 2;
        embed + film + self.n_res_blocks * 2 * branch + proj
    }
}

/// `y = x · weight + bias`, weight stored as `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, out: usize) -> Self {
        Self {
            weight: glorot(rng, fan_in, rows, out),
            bias: Matrix::zeros(1, out),
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + out) as f64).sqrt();
    let data = (0..rows * out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::new(rows, out, data).expect("shape from dimensions")
}

/// One gated residual block. Both branches read `(c, h)`; the `*_c` affine
/// carries the conditioning part and bias, `*_h` the hidden-state part.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedBlock {
    pub gate_c: Affine,
    pub gate_h: Matrix,
    pub gate_out: Affine,
    pub value_c: Affine,
    pub value_h: Matrix,
    pub value_out: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityNetParams {
    pub config: NetConfig,
    pub embed: Affine,
    pub film_scale: Affine,
    pub film_shift: Affine,
    pub blocks: Vec<GatedBlock>,
    /// Hidden state to the two velocity heads `(v0, v1)`.
    pub proj: Affine,
}

pub fn init(cfg: &NetConfig) -> Result<VelocityNetParams, NetError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let (c, h) = (cfg.cond_dim(), cfg.hidden_dim);
    let embed = Affine::glorot(&mut rng, 1, 1, h);
    let film_scale = Affine::glorot(&mut rng, c, c, h);
    let film_shift = Affine::glorot(&mut rng, c, c, h);
    let blocks = (0..cfg.n_res_blocks)
        .map(|_| GatedBlock {
            gate_c: Affine::glorot(&mut rng, c + h, c, h),
            gate_h: glorot(&mut rng, c + h, h, h),
            gate_out: Affine::glorot(&mut rng, h, h, h),
            value_c: Affine::glorot(&mut rng, c + h, c, h),
            value_h: glorot(&mut rng, c + h, h, h),
            value_out: Affine::glorot(&mut rng, h, h, h),
        })
        .collect();
    let proj = Affine::glorot(&mut rng, h, h, 2);
    Ok(VelocityNetParams {
        config: cfg.clone(),
        embed,
        film_scale,
        film_shift,
        blocks,
        proj,
    })
}

impl VelocityNetParams {
    /// Tensors in a fixed order, with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        fn affine<'a>(out: &mut Vec<(String, &'a Matrix)>, name: &str, a: &'a Affine) {
            out.push((format!("{name}.weight"), &a.weight));
            out.push((format!("{name}.bias"), &a.bias));
        }
        let mut out = Vec::new();
        affine(&mut out, "embed", &self.embed);
        affine(&mut out, "film_scale", &self.film_scale);
        affine(&mut out, "film_shift", &self.film_shift);
        for (i, b) in self.blocks.iter().enumerate() {
            affine(&mut out, &format!("block{i}.gate_c"), &b.gate_c);
            out.push((format!("block{i}.gate_h.weight"), &b.gate_h));
            affine(&mut out, &format!("block{i}.gate_out"), &b.gate_out);
            affine(&mut out, &format!("block{i}.value_c"), &b.value_c);
            out.push((format!("block{i}.value_h.weight"), &b.value_h));
            affine(&mut out, &format!("block{i}.value_out"), &b.value_out);
        }
        affine(&mut out, "proj", &self.proj);
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        out.push(&mut self.embed.weight);
        out.push(&mut self.embed.bias);
        out.push(&mut self.film_scale.weight);
        out.push(&mut self.film_scale.bias);
        out.push(&mut self.film_shift.weight);
        out.push(&mut self.film_shift.bias);
        for b in &mut self.blocks {
            out.push(&mut b.gate_c.weight);
            out.push(&mut b.gate_c.bias);
            out.push(&mut b.gate_h);
            out.push(&mut b.gate_out.weight);
            out.push(&mut b.gate_out.bias);
            out.push(&mut b.value_c.weight);
            out.push(&mut b.value_c.bias);
            out.push(&mut b.value_h);
            out.push(&mut b.value_out.weight);
            out.push(&mut b.value_out.bias);
        }
        out.push(&mut self.proj.weight);
        out.push(&mut self.proj.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// Same architecture with every weight and bias set to zero.
    pub fn zeroed(cfg: &NetConfig) -> Result<Self, NetError> {
        let mut p = init(cfg)?;
        for m in p.tensors_mut() {
            m.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(p)
    }
}
