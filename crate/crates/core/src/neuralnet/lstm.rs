//! LSTM and bidirectional LSTM over packed sequences.
//!
//! Gates are laid out `[i, f, g, o]` along the `4·units` axis:
//!
//! ```text
//! i, f, o = σ(x·W + h·U + b)      g = tanh(x·W + h·U + b)
//! c' = f∘c + i∘g                  h' = o∘tanh(c')
//! ```
//!
//! The backward direction walks each sequence from its own last real step
//! to its first, so padding never leaks into the reversed pass.

use rand_distr::{Distribution, StandardNormal};

use super::layers::{glorot_uniform, Param};
use super::packed::{pack, unpack, Packed};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// `(rows, cols)` matrix with orthonormal rows (`rows <= cols`).
pub fn orthogonal(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    // orthonormalize `rows` random vectors of length `cols` (modified Gram-Schmidt)
    let mut q: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| StandardNormal.sample(rng)).collect()).collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let qj = q[j].clone();
            q[i].iter_mut().zip(&qj).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = q[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        q[i].iter_mut().for_each(|a| *a /= norm);
    }
    Tensor::from_vec(&[rows, cols], q.concat()).expect("sized")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `(input, 4·units)`
    pub w: Param,
    /// `(units, 4·units)`
    pub u: Param,
    /// `(4·units)`, forget block initialized to 1.
    pub b: Param,
    pub units: usize,
}

/// Per-row intermediates of a forward pass, indexed like the packed input.
#[derive(Debug, Clone)]
pub struct LstmCache {
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    h_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Lstm {
    pub fn new(name: &str, rng: &mut Rng, input: usize, units: usize) -> Self {
        let w = glorot_uniform(rng, input, 4 * units);
        let u = orthogonal(rng, units, 4 * units);
        let mut b = Tensor::zeros(&[4 * units]);
        b.data_mut()[units..2 * units].iter_mut().for_each(|v| *v = 1.0);
        Lstm {
            w: Param::new(format!("{name}.w"), w),
            u: Param::new(format!("{name}.u"), u),
            b: Param::new(format!("{name}.b"), b),
            units,
        }
    }

    pub fn from_weights(name: &str, w: Tensor, u: Tensor, b: Tensor) -> Result<Self> {
        let (_, g) = w.dims2()?;
        let units = g / 4;
        if g != 4 * units || u.shape() != [units, g] || b.shape() != [g] {
            return Err(Error::shape(format!("lstm weights {:?} / {:?} / {:?}", w.shape(), u.shape(), b.shape())));
        }
        Ok(Lstm {
            w: Param::new(format!("{name}.w"), w),
            u: Param::new(format!("{name}.u"), u),
            b: Param::new(format!("{name}.b"), b),
            units,
        })
    }

    pub fn input_size(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.u, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }

    fn time_index(len: usize, step: usize, dir: Direction) -> usize {
        match dir {
            Direction::Forward => step,
            Direction::Backward => len - 1 - step,
        }
    }

    /// Active `(sequence, packed row)` pairs at `step`.
    fn active(x: &Packed, step: usize, dir: Direction) -> Vec<(usize, usize)> {
        x.lengths()
            .iter()
            .enumerate()
            .filter(|(_, &len)| len > step)
            .map(|(b, &len)| (b, x.row_index(b, Self::time_index(len, step, dir))))
            .collect()
    }

    pub fn forward(&self, x: &Packed, dir: Direction) -> Result<(Tensor, LstmCache)> {
        let (rows, input) = x.data.dims2()?;
        if input != self.input_size() {
            return Err(Error::shape(format!("lstm expects {} inputs, got {input}", self.input_size())));
        }
        let u = self.units;
        let g4 = 4 * u;

        let mut gates = vec![0.0; rows * g4];
        for r in 0..rows {
            gates[r * g4..(r + 1) * g4].copy_from_slice(self.b.value.data());
        }
        gemm(rows, input, g4, x.data.data(), false, self.w.value.data(), false, &mut gates, 1.0);

        let mut cache =
            LstmCache { gates, c_prev: vec![0.0; rows * u], h_prev: vec![0.0; rows * u], tanh_c: vec![0.0; rows * u] };
        let mut out = Tensor::zeros(&[rows, u]);
        let mut h = vec![0.0; x.batch() * u];
        let mut c = vec![0.0; x.batch() * u];
        let mut h_act: Vec<f64> = Vec::new();
        let mut zh: Vec<f64> = Vec::new();

        for step in 0..x.max_len() {
            let active = Self::active(x, step, dir);
            let a = active.len();
            h_act.clear();
            for &(b, _) in &active {
                h_act.extend_from_slice(&h[b * u..(b + 1) * u]);
            }
            zh.clear();
            zh.resize(a * g4, 0.0);
            gemm(a, u, g4, &h_act, false, self.u.value.data(), false, &mut zh, 0.0);

            for (k, &(b, r)) in active.iter().enumerate() {
                let z = &mut cache.gates[r * g4..(r + 1) * g4];
                z.iter_mut().zip(&zh[k * g4..(k + 1) * g4]).for_each(|(g, v)| *g += v);
                for j in 0..u {
                    z[j] = sigmoid(z[j]);
                    z[u + j] = sigmoid(z[u + j]);
                    z[2 * u + j] = z[2 * u + j].tanh();
                    z[3 * u + j] = sigmoid(z[3 * u + j]);
                }
                let hs = &mut h[b * u..(b + 1) * u];
                let cs = &mut c[b * u..(b + 1) * u];
                cache.h_prev[r * u..(r + 1) * u].copy_from_slice(hs);
                cache.c_prev[r * u..(r + 1) * u].copy_from_slice(cs);
                for j in 0..u {
                    let cn = z[u + j] * cs[j] + z[j] * z[2 * u + j];
                    let tc = cn.tanh();
                    cs[j] = cn;
                    hs[j] = z[3 * u + j] * tc;
                    cache.tanh_c[r * u + j] = tc;
                }
                out.row_mut(r).copy_from_slice(hs);
            }
        }
        out.check_finite(&self.w.name)?;
        Ok((out, cache))
    }

    /// Backpropagation through time. Accumulates parameter gradients and
    /// returns `dL/dx` in packed layout.
    pub fn backward(&mut self, x: &Packed, dir: Direction, cache: &LstmCache, dout: &Tensor) -> Result<Tensor> {
        let (rows, input) = x.data.dims2()?;
        let u = self.units;
        let g4 = 4 * u;
        if dout.shape() != [rows, u] {
            return Err(Error::shape(format!("lstm dout {:?}, expected [{rows}, {u}]", dout.shape())));
        }
        let mut dz = vec![0.0; rows * g4];
        let mut dh_next = vec![0.0; x.batch() * u];
        let mut dc_next = vec![0.0; x.batch() * u];
        let mut dz_act: Vec<f64> = Vec::new();
        let mut h_act: Vec<f64> = Vec::new();
        let mut dh_prev: Vec<f64> = Vec::new();

        for step in (0..x.max_len()).rev() {
            let active = Self::active(x, step, dir);
            let a = active.len();
            dz_act.clear();
            h_act.clear();
            for &(b, r) in &active {
                let z = &cache.gates[r * g4..(r + 1) * g4];
                let d = &mut dz[r * g4..(r + 1) * g4];
                for j in 0..u {
                    let (i, f, g, o) = (z[j], z[u + j], z[2 * u + j], z[3 * u + j]);
                    let tc = cache.tanh_c[r * u + j];
                    let dh = dout.row(r)[j] + dh_next[b * u + j];
                    let dc = dc_next[b * u + j] + dh * o * (1.0 - tc * tc);
                    d[j] = dc * g * i * (1.0 - i);
                    d[u + j] = dc * cache.c_prev[r * u + j] * f * (1.0 - f);
                    d[2 * u + j] = dc * i * (1.0 - g * g);
                    d[3 * u + j] = dh * tc * o * (1.0 - o);
                    dc_next[b * u + j] = dc * f;
                }
                dz_act.extend_from_slice(d);
                h_act.extend_from_slice(&cache.h_prev[r * u..(r + 1) * u]);
            }
            gemm(u, a, g4, &h_act, true, &dz_act, false, self.u.grad.data_mut(), 1.0);
            dh_prev.clear();
            dh_prev.resize(a * u, 0.0);
            gemm(a, g4, u, &dz_act, false, self.u.value.data(), true, &mut dh_prev, 0.0);
            for (k, &(b, _)) in active.iter().enumerate() {
                dh_next[b * u..(b + 1) * u].copy_from_slice(&dh_prev[k * u..(k + 1) * u]);
            }
        }

        gemm(input, rows, g4, x.data.data(), true, &dz, false, self.w.grad.data_mut(), 1.0);
        let db = self.b.grad.data_mut();
        for r in 0..rows {
            db.iter_mut().zip(&dz[r * g4..(r + 1) * g4]).for_each(|(g, d)| *g += d);
        }
        let mut dx = Tensor::zeros(&[rows, input]);
        gemm(rows, g4, input, &dz, false, self.w.value.data(), true, dx.data_mut(), 0.0);
        dx.check_finite(&self.w.name)?;
        Ok(dx)
    }
}

/// LSTM over a padded `(batch, time, feat)` tensor; masked steps output 0.
pub fn lstm_forward(lstm: &Lstm, x: &Tensor, mask: &[bool], dir: Direction) -> Result<Tensor> {
    let (_, time, _) = x.dims3()?;
    let p = pack(x, mask)?;
    let (y, _) = lstm.forward(&p, dir)?;
    unpack(&p.with_data(y)?, time)
}

/// Gradient of `Σ dy∘lstm(x)` with respect to `x`; parameter gradients are
/// accumulated into `lstm`.
pub fn lstm_backward(lstm: &mut Lstm, x: &Tensor, mask: &[bool], dir: Direction, dy: &Tensor) -> Result<Tensor> {
    let (_, time, _) = x.dims3()?;
    let p = pack(x, mask)?;
    let (_, cache) = lstm.forward(&p, dir)?;
    let dyp = pack(dy, mask)?;
    let dx = lstm.backward(&p, dir, &cache, &dyp.data)?;
    unpack(&p.with_data(dx)?, time)
}

/// Forward and reversed LSTMs with concatenated outputs `[fwd, bwd]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmCache,
    bwd: LstmCache,
}

impl BiLstm {
    pub fn new(name: &str, rng: &mut Rng, input: usize, units: usize) -> Self {
        BiLstm {
            fwd: Lstm::new(&format!("{name}.fwd"), rng, input, units),
            bwd: Lstm::new(&format!("{name}.bwd"), rng, input, units),
        }
    }

    pub fn units(&self) -> usize {
        self.fwd.units
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.fwd.params();
        v.extend(self.bwd.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fwd.params_mut();
        v.extend(self.bwd.params_mut());
        v
    }

    pub fn forward(&self, x: &Packed) -> Result<(Tensor, BiLstmCache)> {
        let (f, fc) = self.fwd.forward(x, Direction::Forward)?;
        let (b, bc) = self.bwd.forward(x, Direction::Backward)?;
        Ok((Tensor::hcat(&[&f, &b])?, BiLstmCache { fwd: fc, bwd: bc }))
    }

    pub fn backward(&mut self, x: &Packed, cache: &BiLstmCache, dout: &Tensor) -> Result<Tensor> {
        let u = self.units();
        let df = dout.columns(0, u)?;
        let db = dout.columns(u, 2 * u)?;
        let mut dx = self.fwd.backward(x, Direction::Forward, &cache.fwd, &df)?;
        dx.add_assign(&self.bwd.backward(x, Direction::Backward, &cache.bwd, &db)?)?;
        Ok(dx)
    }
}

pub fn bilstm(layer: &BiLstm, x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (_, time, _) = x.dims3()?;
    let p = pack(x, mask)?;
    let (y, _) = layer.forward(&p)?;
    unpack(&p.with_data(y)?, time)
}
