use super::params::{Affine, VelocityNetParams};
use super::NetError;
use crate::numkit::{sigmoid, Matrix, ParamId, Tape, Var};

fn check_inputs(params: &VelocityNetParams, t: f64, x: &[f64], a: u8) -> Result<(), NetError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(NetError::TimeDomain(t));
    }
    if x.len() != params.config.d_x {
        return Err(NetError::Dimension {
            expected: params.config.d_x,
            got: x.len(),
        });
    }
    if a > 1 {
        return Err(NetError::Treatment(a));
    }
    Ok(())
}

/// `bias + c[..k] · weight[..k, :]` for the leading `k` rows of the weight.
fn partial_affine(aff: &Affine, c: &[f64]) -> Vec<f64> {
    let mut out = aff.bias.data().to_vec();
    accumulate_rows(&mut out, &aff.weight, 0, c);
    out
}

/// `out += c · weight[offset..offset + len(c), :]`.
fn accumulate_rows(out: &mut [f64], weight: &Matrix, offset: usize, c: &[f64]) {
    for (k, &ck) in c.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(weight.row(offset + k)) {
            *o += ck * w;
        }
    }
}

/// `out = v · weight` for a square or rectangular weight.
fn vec_mat(out: &mut [f64], v: &[f64], weight: &Matrix) {
    out.iter_mut().for_each(|o| *o = 0.0);
    accumulate_rows(out, weight, 0, v);
}

/// The velocity field with `(x, a)` fixed, evaluated point by point.
///
/// Everything that depends only on `(x, a)` is folded into per-layer base
/// vectors once, so each evaluation only adds the time-encoding rows and runs
/// the hidden-state part of the network.
#[derive(Clone, Debug)]
pub struct ConditionedField<'p> {
    params: &'p VelocityNetParams,
    head: usize,
    scale_base: Vec<f64>,
    shift_base: Vec<f64>,
    gate_base: Vec<Vec<f64>>,
    value_base: Vec<Vec<f64>>,
    time_offset: usize,
    enc: Vec<f64>,
    h: Vec<f64>,
    pre: Vec<f64>,
    mid: Vec<f64>,
    gate: Vec<f64>,
    value: Vec<f64>,
}

impl<'p> ConditionedField<'p> {
    pub fn new(params: &'p VelocityNetParams, x: &[f64], a: u8) -> Result<Self, NetError> {
        check_inputs(params, 0.0, x, a)?;
        let mut xa = x.to_vec();
        xa.push(f64::from(a));
        let hd = params.config.hidden_dim;
        Ok(Self {
            params,
            head: usize::from(a),
            scale_base: partial_affine(&params.film_scale, &xa),
            shift_base: partial_affine(&params.film_shift, &xa),
            gate_base: params.blocks.iter().map(|b| partial_affine(&b.gate_c, &xa)).collect(),
            value_base: params.blocks.iter().map(|b| partial_affine(&b.value_c, &xa)).collect(),
            time_offset: xa.len(),
            enc: Vec::with_capacity(params.config.time_dim()),
            h: vec![0.0; hd],
            pre: vec![0.0; hd],
            mid: vec![0.0; hd],
            gate: vec![0.0; hd],
            value: vec![0.0; hd],
        })
    }

    pub fn treatment(&self) -> u8 {
        self.head as u8
    }

    /// Velocity of the selected head at `(y, t)`. Does not check `t`; the
    /// integrator only visits `[0, 1]`.
    pub fn eval(&mut self, y: f64, t: f64) -> f64 {
        let p = self.params;
        self.enc.clear();
        p.config.encode_time(t, &mut self.enc);
        let off = self.time_offset;

        // outcome embedding, then FiLM
        for j in 0..self.h.len() {
            self.h[j] = y * p.embed.weight.data()[j] + p.embed.bias.data()[j];
        }
        self.pre.copy_from_slice(&self.scale_base);
        accumulate_rows(&mut self.pre, &p.film_scale.weight, off, &self.enc);
        self.mid.copy_from_slice(&self.shift_base);
        accumulate_rows(&mut self.mid, &p.film_shift.weight, off, &self.enc);
        for j in 0..self.h.len() {
            self.h[j] = self.pre[j] * self.h[j] + self.mid[j];
        }

        for (bi, b) in p.blocks.iter().enumerate() {
            // gate branch
            vec_mat(&mut self.pre, &self.h, &b.gate_h);
            for (o, &base) in self.pre.iter_mut().zip(&self.gate_base[bi]) {
                *o += base;
            }
            accumulate_rows(&mut self.pre, &b.gate_c.weight, off, &self.enc);
            self.pre.iter_mut().for_each(|v| *v = v.tanh());
            vec_mat(&mut self.gate, &self.pre, &b.gate_out.weight);
            for (g, &bias) in self.gate.iter_mut().zip(b.gate_out.bias.data()) {
                *g = sigmoid(*g + bias);
            }
            // value branch
            vec_mat(&mut self.pre, &self.h, &b.value_h);
            for (o, &base) in self.pre.iter_mut().zip(&self.value_base[bi]) {
                *o += base;
            }
            accumulate_rows(&mut self.pre, &b.value_c.weight, off, &self.enc);
            self.pre.iter_mut().for_each(|v| *v = v.tanh());
            vec_mat(&mut self.value, &self.pre, &b.value_out.weight);
            for (v, &bias) in self.value.iter_mut().zip(b.value_out.bias.data()) {
                *v += bias;
            }
            for j in 0..self.h.len() {
                self.h[j] = 0.5 * (self.h[j] + self.gate[j] * self.value[j]);
            }
        }

        let w = &p.proj.weight;
        let mut v = p.proj.bias.data()[self.head];
        for (j, &hj) in self.h.iter().enumerate() {
            v += hj * w.get(j, self.head);
        }
        v
    }
}

/// Velocity `v_a(y, t; x)` of the head selected by `a`.
pub fn forward(
    params: &VelocityNetParams,
    y: f64,
    t: f64,
    x: &[f64],
    a: u8,
) -> Result<f64, NetError> {
    check_inputs(params, t, x, a)?;
    Ok(ConditionedField::new(params, x, a)?.eval(y, t))
}

pub fn forward_batch(
    params: &VelocityNetParams,
    ys: &[f64],
    ts: &[f64],
    x: &Matrix,
    a: &[u8],
) -> Result<Vec<f64>, NetError> {
    check_batch(ys, ts, x, a)?;
    (0..ys.len())
        .map(|i| forward(params, ys[i], ts[i], x.row(i), a[i]))
        .collect()
}

fn check_batch(ys: &[f64], ts: &[f64], x: &Matrix, a: &[u8]) -> Result<(), NetError> {
    let n = ys.len();
    if ts.len() != n || x.rows() != n || a.len() != n {
        return Err(NetError::Batch(format!(
            "ys={}, ts={}, x rows={}, a={}",
            n,
            ts.len(),
            x.rows(),
            a.len()
        )));
    }
    Ok(())
}

/// Registers every tensor of `params` on `tape` as a parameter leaf, with
/// `ParamId(i)` following [`VelocityNetParams::named_tensors`] order.
pub fn register_params(params: &VelocityNetParams, tape: &mut Tape) -> Vec<Var> {
    params
        .named_tensors()
        .into_iter()
        .enumerate()
        .map(|(i, (_, m))| tape.param(ParamId(i), m.clone()))
        .collect()
}

/// Batched forward pass recorded on `tape`; returns the `n × 1` node of
/// selected-head velocities.
pub fn forward_tape(
    params: &VelocityNetParams,
    tape: &mut Tape,
    vars: &[Var],
    ys: &[f64],
    ts: &[f64],
    x: &Matrix,
    a: &[u8],
) -> Result<Var, NetError> {
    check_batch(ys, ts, x, a)?;
    let cfg = &params.config;
    let n = ys.len();
    for (&t, &ai) in ts.iter().zip(a) {
        check_inputs(params, t, &vec![0.0; cfg.d_x], ai)?;
    }
    if x.cols() != cfg.d_x {
        return Err(NetError::Dimension {
            expected: cfg.d_x,
            got: x.cols(),
        });
    }

    let mut cond = Vec::with_capacity(n * cfg.cond_dim());
    for i in 0..n {
        cond.extend_from_slice(x.row(i));
        cond.push(f64::from(a[i]));
        cfg.encode_time(ts[i], &mut cond);
    }
    let c = tape.constant(Matrix::new(n, cfg.cond_dim(), cond)?);
    let y = tape.constant(Matrix::column(ys.to_vec()));
    let mut next = vars.iter().copied();
    let mut take = || next.next().expect("one var per tensor");

    let affine = |tape: &mut Tape, input: Var, w: Var, b: Var| -> Result<Var, NetError> {
        let z = tape.matmul(input, w)?;
        Ok(tape.broadcast_add(z, b)?)
    };

    let (ew, eb) = (take(), take());
    let mut h = affine(tape, y, ew, eb)?;
    let (sw, sb, tw, tb) = (take(), take(), take(), take());
    let scale = affine(tape, c, sw, sb)?;
    let shift = affine(tape, c, tw, tb)?;
    let scaled = tape.multiply(scale, h)?;
    h = tape.add(scaled, shift)?;

    let half = tape.constant(Matrix::filled(n, cfg.hidden_dim, 0.5));
    for _ in 0..cfg.n_res_blocks {
        let (gcw, gcb, gh, gow, gob) = (take(), take(), take(), take(), take());
        let (vcw, vcb, vh, vow, vob) = (take(), take(), take(), take(), take());

        let gc = affine(tape, c, gcw, gcb)?;
        let ghh = tape.matmul(h, gh)?;
        let g = tape.add(gc, ghh)?;
        let g = tape.tanh(g);
        let g = affine(tape, g, gow, gob)?;
        let gate = tape.sigmoid(g);

        let vc = affine(tape, c, vcw, vcb)?;
        let vhh = tape.matmul(h, vh)?;
        let v = tape.add(vc, vhh)?;
        let v = tape.tanh(v);
        let value = affine(tape, v, vow, vob)?;

        let update = tape.multiply(gate, value)?;
        let sum = tape.add(h, update)?;
        h = tape.multiply(sum, half)?;
    }

    let (pw, pb) = (take(), take());
    let heads = affine(tape, h, pw, pb)?;
    let mut mask = Matrix::zeros(n, 2);
    for (i, &ai) in a.iter().enumerate() {
        mask.set(i, usize::from(ai), 1.0);
    }
    let mask = tape.constant(mask);
    let picked = tape.multiply(heads, mask)?;
    let ones = tape.constant(Matrix::filled(2, 1, 1.0));
    Ok(tape.matmul(picked, ones)?)
}
