//! Synthetic trajectory datasets from a correlated random walk.
//!
//! Each trajectory starts uniformly inside the box with a uniform heading.
//! Every step turns by a Normal(0, `turn_sigma`) increment, travels
//! `speed · sample_interval` meters with a uniform speed, and reflects its
//! heading off any wall it would cross, so consecutive points are always
//! exactly one step apart.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataio::{RawPoint, Trajectory};
use crate::error::{Error, Result};
use crate::geo::{to_geo, to_local, GeoPoint, LocalPoint, ReferenceFrame};
use crate::rng::sub_rng;

/// 2008-01-01T00:00:00Z
const EPOCH_START: i64 = 1_199_145_600;
const EPOCH_SPAN: i64 = 366 * 86_400;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub trajs_per_user: usize,
    pub len_range: (usize, usize),
    /// `(lat_min, lat_max, lon_min, lon_max)`, degrees.
    pub bbox: (f64, f64, f64, f64),
    pub speed_range: (f64, f64),
    pub sample_interval: i64,
    pub turn_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Roughly 20 × 20 km around central Beijing, taxi-like speeds.
    fn default() -> Self {
        SynthConfig {
            n_users: 50,
            trajs_per_user: 40,
            len_range: (10, 60),
            bbox: (39.81, 39.99, 116.28, 116.52),
            speed_range: (3.0, 15.0),
            sample_interval: 60,
            turn_sigma: 0.35,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn frame(&self) -> Result<ReferenceFrame> {
        let (lat_min, lat_max, lon_min, lon_max) = self.bbox;
        ReferenceFrame::new((lat_min + lat_max) / 2.0, (lon_min + lon_max) / 2.0)
    }

    fn local_box(&self, frame: &ReferenceFrame) -> Result<(LocalPoint, LocalPoint)> {
        let (lat_min, lat_max, lon_min, lon_max) = self.bbox;
        let lo = to_local(frame, &GeoPoint::new(lat_min, lon_min)?);
        let hi = to_local(frame, &GeoPoint::new(lat_max, lon_max)?);
        Ok((lo, hi))
    }

    pub fn validate(&self) -> Result<()> {
        let (lat_min, lat_max, lon_min, lon_max) = self.bbox;
        if !(lat_min < lat_max && lon_min < lon_max) {
            return Err(Error::config("synth bbox is degenerate"));
        }
        GeoPoint::new(lat_min, lon_min)?;
        GeoPoint::new(lat_max, lon_max)?;
        let (smin, smax) = self.speed_range;
        if !(smin > 0.0 && smin <= smax && smax.is_finite()) {
            return Err(Error::config("speed_range must be positive and ordered"));
        }
        let (lmin, lmax) = self.len_range;
        if lmin < 2 || lmin > lmax {
            return Err(Error::config("len_range must satisfy 2 <= min <= max"));
        }
        if self.sample_interval <= 0 {
            return Err(Error::config("sample_interval must be positive"));
        }
        if !(self.turn_sigma >= 0.0 && self.turn_sigma.is_finite()) {
            return Err(Error::config("turn_sigma must be finite and non-negative"));
        }
        let frame = self.frame()?;
        let (lo, hi) = self.local_box(&frame)?;
        let max_step = smax * self.sample_interval as f64;
        let half_side = (hi.x - lo.x).min(hi.y - lo.y) / 2.0;
        if max_step >= half_side {
            return Err(Error::config(format!(
                "largest step {max_step:.1} m does not fit in half the box ({half_side:.1} m)"
            )));
        }
        Ok(())
    }
}

fn walk(cfg: &SynthConfig, frame: &ReferenceFrame, lo: LocalPoint, hi: LocalPoint, index: u64) -> Vec<RawPoint> {
    let mut rng = sub_rng(cfg.seed, index);
    let len = rng.random_range(cfg.len_range.0..=cfg.len_range.1);
    let turn = (cfg.turn_sigma > 0.0).then(|| Normal::new(0.0, cfg.turn_sigma).expect("validated sigma"));
    let mut pos = LocalPoint::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
    let mut heading = rng.random_range(0.0..TAU);
    let mut t = EPOCH_START + rng.random_range(0..EPOCH_SPAN);

    let mut out = Vec::with_capacity(len);
    let emit = |p: &LocalPoint, t: i64| {
        let g = to_geo(frame, p);
        RawPoint::new(g.lat(), g.lon(), t)
    };
    out.push(emit(&pos, t));
    for _ in 1..len {
        if let Some(n) = &turn {
            heading += n.sample(&mut rng);
        }
        let (smin, smax) = cfg.speed_range;
        let speed = if smin < smax { rng.random_range(smin..smax) } else { smin };
        let step = speed * cfg.sample_interval as f64;
        let mut dx = step * heading.cos();
        let mut dy = step * heading.sin();
        if pos.x + dx < lo.x || pos.x + dx > hi.x {
            dx = -dx;
            heading = PI - heading;
        }
        if pos.y + dy < lo.y || pos.y + dy > hi.y {
            dy = -dy;
            heading = -heading;
        }
        heading = heading.rem_euclid(TAU);
        pos = LocalPoint::new(pos.x + dx, pos.y + dy);
        t += cfg.sample_interval;
        out.push(emit(&pos, t));
    }
    out
}

/// Generates `n_users × trajs_per_user` trajectories, deterministic in
/// `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let frame = cfg.frame()?;
    let (lo, hi) = cfg.local_box(&frame)?;
    let mut out = Vec::with_capacity(cfg.n_users * cfg.trajs_per_user);
    for u in 0..cfg.n_users {
        for k in 0..cfg.trajs_per_user {
            let index = (u * cfg.trajs_per_user + k) as u64;
            let points = walk(cfg, &frame, lo, hi, index);
            out.push(Trajectory::new(format!("u{u}"), format!("u{u}_t{k}"), points));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{preprocess, write_canonical, PreprocessConfig};

    fn small() -> SynthConfig {
        SynthConfig { n_users: 4, trajs_per_user: 5, seed: 11, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_canonical(&generate(&small()).unwrap(), &mut a).unwrap();
        write_canonical(&generate(&small()).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let other = generate(&SynthConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(generate(&small()).unwrap(), other);
    }

    #[test]
    fn straight_without_turning() {
        let cfg = SynthConfig { turn_sigma: 0.0, speed_range: (5.0, 5.0), ..small() };
        let frame = cfg.frame().unwrap();
        for t in generate(&cfg).unwrap() {
            let pts: Vec<LocalPoint> =
                t.points.iter().map(|p| to_local(&frame, &GeoPoint::new(p.lat, p.lon).unwrap())).collect();
            // a straight leg keeps a constant displacement vector
            for w in pts.windows(3) {
                let d1 = (w[1].x - w[0].x, w[1].y - w[0].y);
                let d2 = (w[2].x - w[1].x, w[2].y - w[1].y);
                let same = (d1.0 - d2.0).abs() < 1e-6 && (d1.1 - d2.1).abs() < 1e-6;
                let reflected = (d1.0 + d2.0).abs() < 1e-6 || (d1.1 + d2.1).abs() < 1e-6;
                assert!(same || reflected);
            }
        }
    }

    #[test]
    fn speeds_and_bbox_respected() {
        let cfg = small();
        let frame = cfg.frame().unwrap();
        let (lat_min, lat_max, lon_min, lon_max) = cfg.bbox;
        for t in generate(&cfg).unwrap() {
            assert!((cfg.len_range.0..=cfg.len_range.1).contains(&t.len()));
            for p in &t.points {
                assert!(p.lat >= lat_min - 1e-9 && p.lat <= lat_max + 1e-9);
                assert!(p.lon >= lon_min - 1e-9 && p.lon <= lon_max + 1e-9);
            }
            for w in t.points.windows(2) {
                let a = to_local(&frame, &GeoPoint::new(w[0].lat, w[0].lon).unwrap());
                let b = to_local(&frame, &GeoPoint::new(w[1].lat, w[1].lon).unwrap());
                let v = a.distance(&b) / (w[1].timestamp - w[0].timestamp) as f64;
                assert!(v >= cfg.speed_range.0 - 1e-9 && v <= cfg.speed_range.1 + 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn passes_loose_preprocessing_untouched() {
        let cfg = small();
        let data = generate(&cfg).unwrap();
        let pp = PreprocessConfig {
            bbox_percentile: 1.0,
            max_speed_mps: 2.0 * cfg.speed_range.1,
            gap_seconds: 2 * cfg.sample_interval,
            min_len: cfg.len_range.0,
            max_len: cfg.len_range.1,
        };
        let (out, summary) = preprocess(&data, &pp).unwrap();
        assert!(summary.stages.iter().all(|s| s.dropped == 0));
        assert_eq!(out.len(), data.len());
    }

    #[test]
    fn rejects_oversized_steps() {
        let cfg = SynthConfig { speed_range: (100.0, 200.0), ..small() };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig { bbox: (40.0, 40.0, 116.0, 117.0), ..small() };
        assert!(generate(&cfg).is_err());
    }
}
