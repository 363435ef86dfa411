//! Dense layers, activations and parameters.

use rand::Rng as _;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A named weight array with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name: name.into(), value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Glorot/Xavier uniform `(fan_in, fan_out)` matrix.
pub fn glorot_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(&[fan_in, fan_out], data).expect("sized")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
        }
    }

    /// Turns `dy` into `dx` in place, given the activation output `y`.
    /// `relu'(0)` is 0.
    pub fn backward(self, y: &[f64], dy: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => dy.iter_mut().zip(y).for_each(|(d, &v)| {
                if v <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => dy.iter_mut().zip(y).for_each(|(d, &v)| *d *= 1.0 - v * v),
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    Activation::Relu.apply(y.data_mut());
    y
}

pub fn tanh(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    Activation::Tanh.apply(y.data_mut());
    y
}

/// `y = act(x·W + b)` over the rows of a 2-D input.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Param,
    pub b: Param,
    pub act: Activation,
}

impl Dense {
    pub fn new(name: &str, rng: &mut Rng, fan_in: usize, fan_out: usize, act: Activation) -> Self {
        Dense {
            w: Param::new(format!("{name}.w"), glorot_uniform(rng, fan_in, fan_out)),
            b: Param::new(format!("{name}.b"), Tensor::zeros(&[fan_out])),
            act,
        }
    }

    pub fn from_weights(name: &str, w: Tensor, b: Tensor, act: Activation) -> Result<Self> {
        let (_, out) = w.dims2()?;
        if b.shape() != [out] {
            return Err(Error::shape(format!("bias {:?} for {out} outputs", b.shape())));
        }
        Ok(Dense { w: Param::new(format!("{name}.w"), w), b: Param::new(format!("{name}.b"), b), act })
    }

    pub fn fan_in(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims2()?;
        if cols != self.fan_in() {
            return Err(Error::shape(format!("dense expects {} inputs, got {cols}", self.fan_in())));
        }
        let out = self.fan_out();
        let mut y = Tensor::zeros(&[rows, out]);
        for r in 0..rows {
            y.row_mut(r).copy_from_slice(self.b.value.data());
        }
        gemm(rows, cols, out, x.data(), false, self.w.value.data(), false, y.data_mut(), 1.0);
        self.act.apply(y.data_mut());
        y.check_finite(&self.w.name)?;
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`. `x` and `y` are
    /// the input and output of the matching forward call.
    pub fn backward(&mut self, x: &Tensor, y: &Tensor, dy: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.dims2()?;
        let out = self.fan_out();
        if dy.shape() != [rows, out] || y.shape() != [rows, out] {
            return Err(Error::shape(format!(
                "dense backward: dy {:?}, y {:?} for input {:?}",
                dy.shape(),
                y.shape(),
                x.shape()
            )));
        }
        let mut dz = dy.clone();
        self.act.backward(y.data(), dz.data_mut());
        gemm(cols, rows, out, x.data(), true, dz.data(), false, self.w.grad.data_mut(), 1.0);
        let db = self.b.grad.data_mut();
        for r in 0..rows {
            for (g, d) in db.iter_mut().zip(dz.row(r)) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(&[rows, cols]);
        gemm(rows, out, cols, dz.data(), false, self.w.value.data(), true, dx.data_mut(), 0.0);
        Ok(dx)
    }
}
