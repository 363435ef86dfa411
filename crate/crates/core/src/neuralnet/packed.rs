//! Mask-compacted sequence batches.
//!
//! A `(batch, time, feat)` tensor with a true-prefix mask is stored as the
//! unmasked rows only, sequence after sequence. Every layer works on this
//! packed form, so extra padding never reaches the arithmetic.

use super::layers::Dense;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Packed {
    lengths: Vec<usize>,
    offsets: Vec<usize>,
    /// `(sum(lengths), feat)`.
    pub data: Tensor,
}

impl Packed {
    pub fn new(lengths: Vec<usize>, data: Tensor) -> Result<Self> {
        let (rows, _) = data.dims2()?;
        let mut offsets = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &l in &lengths {
            offsets.push(acc);
            acc += l;
        }
        if acc != rows {
            return Err(Error::shape(format!("lengths sum to {acc}, data has {rows} rows")));
        }
        Ok(Packed { lengths, offsets, data })
    }

    /// Same layout, different features.
    pub fn with_data(&self, data: Tensor) -> Result<Self> {
        if data.dims2()?.0 != self.rows() {
            return Err(Error::shape("packed data row count changed"));
        }
        Ok(Packed { lengths: self.lengths.clone(), offsets: self.offsets.clone(), data })
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    pub fn rows(&self) -> usize {
        self.offsets.last().zip(self.lengths.last()).map_or(0, |(o, l)| o + l)
    }

    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    /// Packed row of sequence `b` at time `t`.
    pub fn row_index(&self, b: usize, t: usize) -> usize {
        self.offsets[b] + t
    }
}

/// True-prefix lengths of a `(batch, time)` mask.
pub fn mask_lengths(mask: &[bool], batch: usize, time: usize) -> Result<Vec<usize>> {
    if mask.len() != batch * time {
        return Err(Error::shape(format!("mask of {} for ({batch}, {time})", mask.len())));
    }
    let mut lengths = Vec::with_capacity(batch);
    for b in 0..batch {
        let row = &mask[b * time..(b + 1) * time];
        let len = row.iter().take_while(|m| **m).count();
        if row[len..].iter().any(|m| *m) {
            return Err(Error::shape(format!("mask row {b} is not a contiguous prefix")));
        }
        lengths.push(len);
    }
    Ok(lengths)
}

pub fn pack(x: &Tensor, mask: &[bool]) -> Result<Packed> {
    let (batch, time, feat) = x.dims3()?;
    let lengths = mask_lengths(mask, batch, time)?;
    let rows: usize = lengths.iter().sum();
    let mut data = Vec::with_capacity(rows * feat);
    for (b, &len) in lengths.iter().enumerate() {
        let start = b * time * feat;
        data.extend_from_slice(&x.data()[start..start + len * feat]);
    }
    Packed::new(lengths, Tensor::from_vec(&[rows, feat], data)?)
}

/// Scatters packed rows back into a zero-padded `(batch, time, feat)` tensor.
pub fn unpack(p: &Packed, time: usize) -> Result<Tensor> {
    let (_, feat) = p.data.dims2()?;
    if p.max_len() > time {
        return Err(Error::shape(format!("sequence of {} steps into {time}", p.max_len())));
    }
    let mut out = Tensor::zeros(&[p.batch(), time, feat]);
    for (b, &len) in p.lengths().iter().enumerate() {
        let src = p.row_index(b, 0) * feat;
        let dst = b * time * feat;
        out.data_mut()[dst..dst + len * feat].copy_from_slice(&p.data.data()[src..src + len * feat]);
    }
    Ok(out)
}

/// Applies `layer` to every unmasked timestep with shared weights; masked
/// steps come out as zeros.
pub fn time_shared(layer: &Dense, x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (_, time, _) = x.dims3()?;
    let p = pack(x, mask)?;
    let y = layer.forward(&p.data)?;
    unpack(&p.with_data(y)?, time)
}

/// Backward pass of [`time_shared`]. Masked steps receive zero gradient.
pub fn time_shared_backward(layer: &mut Dense, x: &Tensor, mask: &[bool], dy: &Tensor) -> Result<Tensor> {
    let (_, time, _) = x.dims3()?;
    let p = pack(x, mask)?;
    let y = layer.forward(&p.data)?;
    let pdy = pack(dy, mask)?;
    let dx = layer.backward(&p.data, &y, &pdy.data)?;
    unpack(&p.with_data(dx)?, time)
}
