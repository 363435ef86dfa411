//! Central finite-difference gradient checking.

use std::fmt;

use rand::Rng as _;

use super::layers::{Activation, Dense, Param};
use super::loss::{haversine_mae_loss, mse_loss};
use super::lstm::{bilstm, lstm_backward, lstm_forward, BiLstm, Direction, Lstm};
use super::packed::{pack, time_shared, time_shared_backward, unpack};
use super::tensor::Tensor;
use crate::encoding::EncoderConfig;
use crate::error::Result;
use crate::geo::ReferenceFrame;
use crate::rng::{rng_from_seed, Rng};

pub const FD_STEP: f64 = 1e-5;

/// Something with parameters and a scalar loss.
pub trait Differentiable {
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Loss at the current parameters, without touching gradients.
    fn loss(&mut self) -> Result<f64>;

    /// Zeroes gradients, then fills them for the current loss.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: max_rel_err={:.3e} (tol {:.0e}, {} values, worst {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.tolerance,
            self.checked,
            self.worst_param
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences on every parameter
/// value.
pub fn grad_check<M: Differentiable + ?Sized>(name: &str, model: &mut M, tolerance: f64) -> Result<GradReport> {
    model.loss_and_grad()?;
    let analytic: Vec<(String, Vec<f64>)> =
        model.params_mut().iter().map(|p| (p.name.clone(), p.grad.data().to_vec())).collect();
    let mut report =
        GradReport { name: name.to_string(), max_rel_err: 0.0, worst_param: String::new(), checked: 0, tolerance };
    for (pi, (pname, grads)) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = model.params_mut()[pi].value.data()[k];
            model.params_mut()[pi].value.data_mut()[k] = orig + FD_STEP;
            let plus = model.loss()?;
            model.params_mut()[pi].value.data_mut()[k] = orig - FD_STEP;
            let minus = model.loss()?;
            model.params_mut()[pi].value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{pname}[{k}]");
            }
        }
    }
    Ok(report)
}

fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// `Σ proj ∘ dense(x)` with the input treated as a parameter.
pub struct DenseProblem {
    pub layer: Dense,
    pub x: Param,
    pub proj: Tensor,
}

impl DenseProblem {
    pub fn new(seed: u64, rows: usize, fan_in: usize, fan_out: usize, act: Activation) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut layer = Dense::new("dense", &mut rng, fan_in, fan_out, act);
        layer.b.value = random_tensor(&mut rng, &[fan_out], -0.5, 0.5);
        DenseProblem {
            layer,
            x: Param::new("x", random_tensor(&mut rng, &[rows, fan_in], -1.0, 1.0)),
            proj: random_tensor(&mut rng, &[rows, fan_out], -1.0, 1.0),
        }
    }
}

impl Differentiable for DenseProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.params_mut();
        v.push(&mut self.x);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&self.layer.forward(&self.x.value)?, &self.proj))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.params_mut().into_iter().for_each(Param::zero_grad);
        let y = self.layer.forward(&self.x.value)?;
        let dx = self.layer.backward(&self.x.value, &y, &self.proj)?;
        self.x.grad = dx;
        Ok(dot(&y, &self.proj))
    }
}

/// `Σ proj ∘ act(x)`, inputs kept away from the ReLU kink.
pub struct ActivationProblem {
    pub act: Activation,
    pub x: Param,
    pub proj: Tensor,
}

impl ActivationProblem {
    pub fn new(seed: u64, n: usize, act: Activation) -> Self {
        let mut rng = rng_from_seed(seed);
        let data = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..2.0);
                if rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        ActivationProblem {
            act,
            x: Param::new("x", Tensor::from_vec(&[n], data).expect("sized")),
            proj: random_tensor(&mut rng, &[n], -1.0, 1.0),
        }
    }

    fn output(&self) -> Tensor {
        let mut y = self.x.value.clone();
        self.act.apply(y.data_mut());
        y
    }
}

impl Differentiable for ActivationProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.x]
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&self.output(), &self.proj))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let y = self.output();
        let mut d = self.proj.clone();
        self.act.backward(y.data(), d.data_mut());
        self.x.grad = d;
        Ok(dot(&y, &self.proj))
    }
}

/// Time-shared dense over a padded batch with a ragged mask.
pub struct TimeSharedProblem {
    pub layer: Dense,
    pub x: Param,
    pub mask: Vec<bool>,
    pub proj: Tensor,
}

impl TimeSharedProblem {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let (b, t, f, o) = (2, 4, 3, 5);
        let mut layer = Dense::new("td", &mut rng, f, o, Activation::Tanh);
        layer.b.value = random_tensor(&mut rng, &[o], -0.5, 0.5);
        TimeSharedProblem {
            layer,
            x: Param::new("x", random_tensor(&mut rng, &[b, t, f], -1.0, 1.0)),
            mask: vec![true, true, true, true, true, true, false, false],
            proj: random_tensor(&mut rng, &[b, t, o], -1.0, 1.0),
        }
    }
}

impl Differentiable for TimeSharedProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.params_mut();
        v.push(&mut self.x);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&time_shared(&self.layer, &self.x.value, &self.mask)?, &self.proj))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.params_mut().into_iter().for_each(Param::zero_grad);
        let loss = self.loss()?;
        self.x.grad = time_shared_backward(&mut self.layer, &self.x.value, &self.mask, &self.proj)?;
        Ok(loss)
    }
}

/// Single-direction LSTM, `(2, 5, 3) → 4` units, ragged lengths.
pub struct LstmProblem {
    pub lstm: Lstm,
    pub dir: Direction,
    pub x: Param,
    pub mask: Vec<bool>,
    pub proj: Tensor,
}

impl LstmProblem {
    pub fn new(seed: u64, dir: Direction) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut lstm = Lstm::new("lstm", &mut rng, 3, 4);
        lstm.b.value = random_tensor(&mut rng, &[16], -0.5, 0.5);
        let mut mask = vec![true; 10];
        mask[8] = false;
        mask[9] = false;
        LstmProblem {
            lstm,
            dir,
            x: Param::new("x", random_tensor(&mut rng, &[2, 5, 3], -1.0, 1.0)),
            mask,
            proj: random_tensor(&mut rng, &[2, 5, 4], -1.0, 1.0),
        }
    }
}

impl Differentiable for LstmProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.lstm.params_mut();
        v.push(&mut self.x);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&lstm_forward(&self.lstm, &self.x.value, &self.mask, self.dir)?, &self.proj))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.params_mut().into_iter().for_each(Param::zero_grad);
        let loss = self.loss()?;
        self.x.grad = lstm_backward(&mut self.lstm, &self.x.value, &self.mask, self.dir, &self.proj)?;
        Ok(loss)
    }
}

pub struct BiLstmProblem {
    pub layer: BiLstm,
    pub x: Param,
    pub mask: Vec<bool>,
    pub proj: Tensor,
}

impl BiLstmProblem {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let layer = BiLstm::new("bilstm", &mut rng, 3, 4);
        let mut mask = vec![true; 10];
        mask[7] = false;
        mask[8] = false;
        mask[9] = false;
        BiLstmProblem {
            layer,
            x: Param::new("x", random_tensor(&mut rng, &[2, 5, 3], -1.0, 1.0)),
            mask,
            proj: random_tensor(&mut rng, &[2, 5, 8], -1.0, 1.0),
        }
    }
}

impl Differentiable for BiLstmProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.layer.params_mut();
        v.push(&mut self.x);
        v
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(dot(&bilstm(&self.layer, &self.x.value, &self.mask)?, &self.proj))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.params_mut().into_iter().for_each(Param::zero_grad);
        let p = pack(&self.x.value, &self.mask)?;
        let (y, cache) = self.layer.forward(&p)?;
        let time = self.mask.len() / p.batch();
        let dy = pack(&self.proj, &self.mask)?;
        let dx = self.layer.backward(&p, &cache, &dy.data)?;
        self.x.grad = unpack(&p.with_data(dx)?, time)?;
        Ok(dot(&unpack(&p.with_data(y)?, time)?, &self.proj))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    HaversineMae,
    Mse,
}

/// A loss with the prediction treated as the parameter.
pub struct LossProblem {
    pub kind: LossKind,
    pub pred: Param,
    pub target: Tensor,
    pub mask: Vec<bool>,
    pub enc: EncoderConfig,
}

impl LossProblem {
    pub fn new(seed: u64, kind: LossKind) -> Self {
        let mut rng = rng_from_seed(seed);
        let enc = EncoderConfig::new(ReferenceFrame::new(39.9, 116.4).unwrap(), 0.1, 0.12, 6).unwrap();
        LossProblem {
            kind,
            pred: Param::new("pred", random_tensor(&mut rng, &[2, 6, 2], -1.0, 1.0)),
            target: random_tensor(&mut rng, &[2, 6, 2], -1.0, 1.0),
            mask: (0..12).map(|i| i % 6 < if i < 6 { 6 } else { 4 }).collect(),
            enc,
        }
    }

    fn eval(&self) -> Result<(f64, Tensor)> {
        match self.kind {
            LossKind::HaversineMae => haversine_mae_loss(&self.pred.value, &self.target, &self.mask, &self.enc),
            LossKind::Mse => mse_loss(&self.pred.value, &self.target, &self.mask, &self.enc),
        }
    }
}

impl Differentiable for LossProblem {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.pred]
    }

    fn loss(&mut self) -> Result<f64> {
        Ok(self.eval()?.0)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        let (l, g) = self.eval()?;
        self.pred.grad = g;
        Ok(l)
    }
}

/// Tolerance for dense layers and activations.
pub const TOL_DENSE: f64 = 1e-6;
/// Tolerance for recurrent layers, losses and the full model.
pub const TOL_RECURRENT: f64 = 1e-4;

/// Checks every building block at its stated tolerance.
pub fn layer_checks(seed: u64) -> Result<Vec<GradReport>> {
    let mut out = vec![
        grad_check("dense", &mut DenseProblem::new(seed, 3, 4, 2, Activation::Identity), TOL_DENSE)?,
        grad_check("relu", &mut ActivationProblem::new(seed + 1, 20, Activation::Relu), TOL_DENSE)?,
        grad_check("tanh", &mut ActivationProblem::new(seed + 2, 20, Activation::Tanh), TOL_DENSE)?,
        grad_check("time_shared_dense", &mut TimeSharedProblem::new(seed + 3), TOL_DENSE)?,
    ];
    out.push(grad_check("lstm_forward", &mut LstmProblem::new(seed + 4, Direction::Forward), TOL_RECURRENT)?);
    out.push(grad_check("lstm_backward", &mut LstmProblem::new(seed + 5, Direction::Backward), TOL_RECURRENT)?);
    out.push(grad_check("bilstm", &mut BiLstmProblem::new(seed + 6), TOL_RECURRENT)?);
    out.push(grad_check("haversine_mae_loss", &mut LossProblem::new(seed + 7, LossKind::HaversineMae), TOL_RECURRENT)?);
    out.push(grad_check("mse_loss", &mut LossProblem::new(seed + 8, LossKind::Mse), TOL_RECURRENT)?);
    Ok(out)
}
