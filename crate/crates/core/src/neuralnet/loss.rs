//! Haversine mean-absolute-error and MSE losses.
//!
//! Predictions and targets are scaled `(lat, lon)` offsets as produced by
//! the encoder. Row functions work on packed `(rows, 2)` tensors and return
//! per-row losses with their gradients; the tensor-level functions average
//! over unmasked steps.

use super::packed::{pack, unpack};
use super::tensor::Tensor;
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::geo::{coords_valid, EARTH_RADIUS_M};

/// Haversine distance between decoded `pred` and `target` and its gradient
/// with respect to the two scaled `pred` offsets. The gradient is 0 at
/// coincidence.
pub fn haversine_row(pred: &[f64], target: &[f64], enc: &EncoderConfig) -> (f64, [f64; 2]) {
    let (plat, _) = enc.decode_offsets(pred[0], pred[1]);
    let (tlat, _) = enc.decode_offsets(target[0], target[1]);
    let phi1 = plat.to_radians();
    let phi2 = tlat.to_radians();
    // Differences straight from the offsets: going through absolute degrees
    // first would cancel most of the significant bits.
    let dphi = ((target[0] - pred[0]) * enc.scale_lat).to_radians();
    let dlam = ((target[1] - pred[1]) * enc.scale_lon).to_radians();
    let s_dphi = (dphi * 0.5).sin();
    let s_dlam = (dlam * 0.5).sin();
    let (c1, c2) = (phi1.cos(), phi2.cos());
    let h = (s_dphi * s_dphi + c1 * c2 * s_dlam * s_dlam).clamp(0.0, 1.0);
    let d = 2.0 * EARTH_RADIUS_M * h.sqrt().asin();
    if h <= 0.0 || h >= 1.0 {
        return (d, [0.0, 0.0]);
    }
    let dd_dh = EARTH_RADIUS_M / (h.sqrt() * (1.0 - h).sqrt());
    let dh_dphi1 = -0.5 * dphi.sin() - phi1.sin() * c2 * s_dlam * s_dlam;
    let dh_dlam1 = -0.5 * c1 * c2 * dlam.sin();
    let deg = std::f64::consts::PI / 180.0;
    (d, [dd_dh * dh_dphi1 * deg * enc.scale_lat, dd_dh * dh_dlam1 * deg * enc.scale_lon])
}

/// Mean squared error over the two offsets of one row and its gradient.
pub fn mse_row(pred: &[f64], target: &[f64]) -> (f64, [f64; 2]) {
    let e0 = pred[0] - target[0];
    let e1 = pred[1] - target[1];
    ((e0 * e0 + e1 * e1) / 2.0, [e0, e1])
}

/// True when a scaled row decodes to a valid coordinate.
pub fn row_decodes_valid(row: &[f64], enc: &EncoderConfig) -> bool {
    let (lat, lon) = enc.decode_offsets(row[0], row[1]);
    coords_valid(lat, lon)
}

/// Mean over rows of haversine or MSE row losses (`use_mse[r]` selects),
/// with the gradient of that mean.
pub fn mixed_rows(pred: &Tensor, target: &Tensor, use_mse: &[bool], enc: &EncoderConfig) -> Result<(f64, Tensor)> {
    let (rows, cols) = pred.dims2()?;
    if cols != 2 || target.shape() != pred.shape() || use_mse.len() != rows {
        return Err(Error::shape(format!(
            "loss over pred {:?}, target {:?}, {} selectors",
            pred.shape(),
            target.shape(),
            use_mse.len()
        )));
    }
    let mut grad = Tensor::zeros(&[rows, 2]);
    if rows == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / rows as f64;
    let mut total = 0.0;
    for (r, &mse) in use_mse.iter().enumerate().take(rows) {
        let (l, g) =
            if mse { mse_row(pred.row(r), target.row(r)) } else { haversine_row(pred.row(r), target.row(r), enc) };
        total += l;
        let out = grad.row_mut(r);
        out[0] = g[0] * inv;
        out[1] = g[1] * inv;
    }
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}

fn masked_loss(pred: &Tensor, target: &Tensor, mask: &[bool], mse: bool, enc: &EncoderConfig) -> Result<(f64, Tensor)> {
    let (_, time, feat) = pred.dims3()?;
    if feat != 2 || target.shape() != pred.shape() {
        return Err(Error::shape(format!("loss over {:?} and {:?}", pred.shape(), target.shape())));
    }
    let p = pack(pred, mask)?;
    let t = pack(target, mask)?;
    let (loss, g) = mixed_rows(&p.data, &t.data, &vec![mse; p.rows()], enc)?;
    Ok((loss, unpack(&p.with_data(g)?, time)?))
}

/// Mean haversine distance (meters) between decoded predictions and targets
/// over unmasked steps, with the gradient w.r.t. `pred`.
pub fn haversine_mae_loss(pred: &Tensor, target: &Tensor, mask: &[bool], enc: &EncoderConfig) -> Result<(f64, Tensor)> {
    let p = pack(pred, mask)?;
    for r in 0..p.rows() {
        if !row_decodes_valid(p.data.row(r), enc) {
            return Err(Error::domain("prediction decodes to an invalid coordinate; use the MSE loss"));
        }
    }
    masked_loss(pred, target, mask, false, enc)
}

/// Mean squared error over unmasked entries in scaled-offset space.
///
/// Each row contributes the mean of its two squared errors, so this equals
/// the mean over all unmasked entries.
pub fn mse_loss(pred: &Tensor, target: &Tensor, mask: &[bool], enc: &EncoderConfig) -> Result<(f64, Tensor)> {
    masked_loss(pred, target, mask, true, enc)
}
