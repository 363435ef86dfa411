//! Trajectory ⇄ model tensor conversion.
//!
//! Each point becomes a 33-wide row: scaled latitude and longitude offsets
//! from a reference point, a 24-way hour-of-day one-hot and a 7-way
//! day-of-week one-hot (Monday = 0), all in UTC. Rows past the trajectory's
//! end are zero and masked out. Further one-hot feature blocks would be
//! appended after the day-of-week block.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Timelike};
use rand::seq::SliceRandom;

use crate::dataio::{RawPoint, Trajectory};
use crate::error::{Error, Result};
use crate::geo::ReferenceFrame;
use crate::mechanisms::ProtectedPair;
use crate::neuralnet::loss::row_decodes_valid;
use crate::neuralnet::Tensor;
use crate::rng::sub_rng;

pub const LOC_FEATURES: usize = 2;
pub const HOUR_FEATURES: usize = 24;
pub const DOW_FEATURES: usize = 7;
pub const FEATURES: usize = LOC_FEATURES + HOUR_FEATURES + DOW_FEATURES;

const MIN_SCALE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub frame: ReferenceFrame,
    pub scale_lat: f64,
    pub scale_lon: f64,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn new(frame: ReferenceFrame, scale_lat: f64, scale_lon: f64, max_len: usize) -> Result<Self> {
        if !(scale_lat > 0.0 && scale_lon > 0.0 && scale_lat.is_finite() && scale_lon.is_finite()) {
            return Err(Error::config(format!("encoder scales must be positive, got {scale_lat}, {scale_lon}")));
        }
        Ok(EncoderConfig { frame, scale_lat, scale_lon, max_len })
    }

    pub fn encode_offsets(&self, lat: f64, lon: f64) -> (f64, f64) {
        ((lat - self.frame.lat0()) / self.scale_lat, (lon - self.frame.lon0()) / self.scale_lon)
    }

    pub fn decode_offsets(&self, dlat: f64, dlon: f64) -> (f64, f64) {
        (self.frame.lat0() + dlat * self.scale_lat, self.frame.lon0() + dlon * self.scale_lon)
    }
}

impl fmt::Display for EncoderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lat0={} lon0={} scale_lat={} scale_lon={} max_len={}",
            self.frame.lat0(),
            self.frame.lon0(),
            self.scale_lat,
            self.scale_lon,
            self.max_len
        )
    }
}

impl FromStr for EncoderConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut vals = [None; 5];
        const KEYS: [&str; 5] = ["lat0", "lon0", "scale_lat", "scale_lon", "max_len"];
        for tok in s.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::format(format!("encoder config token {tok:?}")))?;
            let i =
                KEYS.iter().position(|x| *x == k).ok_or_else(|| Error::format(format!("unknown encoder key {k:?}")))?;
            vals[i] = Some(v.parse::<f64>().map_err(|_| Error::format(format!("bad encoder value {v:?}")))?);
        }
        let get = |i: usize| vals[i].ok_or_else(|| Error::format(format!("encoder config lacks {}", KEYS[i])));
        let max_len = get(4)?;
        if max_len < 0.0 || max_len.fract() != 0.0 {
            return Err(Error::format(format!("bad max_len {max_len}")));
        }
        EncoderConfig::new(ReferenceFrame::new(get(0)?, get(1)?)?, get(2)?, get(3)?, max_len as usize)
    }
}

/// Reference point at the bounding-box midpoint of `trajs`, per-axis scales
/// equal to the largest absolute offset.
pub fn fit_encoder(trajs: &[Trajectory], max_len: usize) -> Result<EncoderConfig> {
    let bbox = crate::dataio::BoundingBox::of(trajs)
        .ok_or_else(|| Error::domain("cannot fit an encoder to an empty dataset"))?;
    let lat0 = (bbox.lat_min + bbox.lat_max) / 2.0;
    let lon0 = (bbox.lon_min + bbox.lon_max) / 2.0;
    let mut scale_lat: f64 = 0.0;
    let mut scale_lon: f64 = 0.0;
    for p in trajs.iter().flat_map(|t| t.points.iter()) {
        scale_lat = scale_lat.max((p.lat - lat0).abs());
        scale_lon = scale_lon.max((p.lon - lon0).abs());
    }
    EncoderConfig::new(ReferenceFrame::new(lat0, lon0)?, scale_lat.max(MIN_SCALE), scale_lon.max(MIN_SCALE), max_len)
}

/// UTC hour of day and weekday (Monday = 0).
pub fn time_features(timestamp: i64) -> Result<(usize, usize)> {
    let dt = DateTime::from_timestamp(timestamp, 0)
        .ok_or_else(|| Error::domain(format!("timestamp {timestamp} out of range")))?;
    Ok((dt.hour() as usize, dt.weekday().num_days_from_monday() as usize))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTrajectory {
    /// `(max_len, 33)`
    pub matrix: Tensor,
    pub mask: Vec<bool>,
    pub true_len: usize,
}

fn write_row(row: &mut [f64], p: &RawPoint, cfg: &EncoderConfig) -> Result<()> {
    let (dlat, dlon) = cfg.encode_offsets(p.lat, p.lon);
    let (hour, dow) = time_features(p.timestamp)?;
    row[0] = dlat;
    row[1] = dlon;
    row[LOC_FEATURES + hour] = 1.0;
    row[LOC_FEATURES + HOUR_FEATURES + dow] = 1.0;
    Ok(())
}

pub fn encode(traj: &Trajectory, cfg: &EncoderConfig) -> Result<EncodedTrajectory> {
    let n = traj.len();
    if n > cfg.max_len {
        return Err(Error::domain(format!(
            "trajectory {} has {n} points, encoder max_len is {}",
            traj.traj_id, cfg.max_len
        )));
    }
    let mut matrix = Tensor::zeros(&[cfg.max_len, FEATURES]);
    for (i, p) in traj.points.iter().enumerate() {
        write_row(matrix.row_mut(i), p, cfg)?;
    }
    let mask = (0..cfg.max_len).map(|i| i < n).collect();
    Ok(EncodedTrajectory { matrix, mask, true_len: n })
}

/// Scaled location offsets only, `(max_len, 2)`, zero padded.
pub fn encode_targets(traj: &Trajectory, cfg: &EncoderConfig) -> Result<Tensor> {
    if traj.len() > cfg.max_len {
        return Err(Error::domain(format!("trajectory {} exceeds max_len", traj.traj_id)));
    }
    let mut t = Tensor::zeros(&[cfg.max_len, LOC_FEATURES]);
    for (i, p) in traj.points.iter().enumerate() {
        let (a, b) = cfg.encode_offsets(p.lat, p.lon);
        t.row_mut(i).copy_from_slice(&[a, b]);
    }
    Ok(t)
}

/// Turns scaled model output back into a trajectory shaped like
/// `protected` (same length, timestamps and ids).
pub fn decode(output: &Tensor, protected: &Trajectory, cfg: &EncoderConfig) -> Result<Trajectory> {
    let (rows, cols) = output.dims2()?;
    if cols != LOC_FEATURES || rows < protected.len() {
        return Err(Error::shape(format!("decode of {:?} for a {}-point trajectory", output.shape(), protected.len())));
    }
    let points = protected
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = output.row(i);
            let (lat, lon) = cfg.decode_offsets(r[0], r[1]);
            RawPoint::new(lat, lon, p.timestamp)
        })
        .collect();
    Ok(Trajectory { user_id: protected.user_id.clone(), traj_id: protected.traj_id.clone(), points })
}

/// One training pair, pre-encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub input: EncodedTrajectory,
    /// `(max_len, 2)`
    pub target: Tensor,
    /// The protected trajectory holds an invalid coordinate, so the pair is
    /// trained with MSE.
    pub use_mse: bool,
}

pub fn encode_pair(pair: &ProtectedPair, cfg: &EncoderConfig) -> Result<EncodedPair> {
    if pair.original.len() != pair.protected.len() {
        return Err(Error::domain(format!("pair {} has mismatched lengths", pair.original.traj_id)));
    }
    let input = encode(&pair.protected, cfg)?;
    let use_mse = (0..input.true_len).any(|i| !row_decodes_valid(input.matrix.row(i), cfg));
    Ok(EncodedPair { input, target: encode_targets(&pair.original, cfg)?, use_mse })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `(batch, max_len, 33)`, from the protected trajectories.
    pub input: Tensor,
    /// `(batch, max_len, 2)`, from the originals.
    pub target: Tensor,
    /// `(batch · max_len)`, shared by input and target.
    pub mask: Vec<bool>,
    pub use_mse: Vec<bool>,
    /// Positions of the batch members in the source slice.
    pub indices: Vec<usize>,
}

/// Stacks the selected encoded pairs into one batch.
pub fn collate(pairs: &[EncodedPair], indices: &[usize]) -> Result<Batch> {
    let first = indices.first().map(|&i| &pairs[i]).ok_or_else(|| Error::domain("empty batch"))?;
    let max_len = first.input.mask.len();
    let b = indices.len();
    let mut input = Vec::with_capacity(b * max_len * FEATURES);
    let mut target = Vec::with_capacity(b * max_len * LOC_FEATURES);
    let mut mask = Vec::with_capacity(b * max_len);
    let mut use_mse = Vec::with_capacity(b);
    for &i in indices {
        let p = &pairs[i];
        if p.input.mask.len() != max_len {
            return Err(Error::shape("pairs encoded with different max_len"));
        }
        input.extend_from_slice(p.input.matrix.data());
        target.extend_from_slice(p.target.data());
        mask.extend_from_slice(&p.input.mask);
        use_mse.push(p.use_mse);
    }
    Ok(Batch {
        input: Tensor::from_vec(&[b, max_len, FEATURES], input)?,
        target: Tensor::from_vec(&[b, max_len, LOC_FEATURES], target)?,
        mask,
        use_mse,
        indices: indices.to_vec(),
    })
}

/// Batch index lists for one epoch: a seeded shuffle, last partial batch kept.
pub fn batch_order(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut sub_rng(epoch_seed, 0));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Encodes `pairs` and groups them into shuffled batches.
pub fn make_batches(
    pairs: &[ProtectedPair],
    cfg: &EncoderConfig,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Batch>> {
    let encoded: Vec<EncodedPair> = pairs.iter().map(|p| encode_pair(p, cfg)).collect::<Result<_>>()?;
    batch_order(encoded.len(), batch_size, epoch_seed).iter().map(|idx| collate(&encoded, idx)).collect()
}
