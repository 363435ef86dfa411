//! Differential-privacy primitives and the CNoise and SDD trajectory
//! mechanisms.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::dataio::{RawPoint, Trajectory};
use crate::error::{Error, Result};
use crate::geo::{angular_distance, polar_between, polar_step, to_geo, to_local, GeoPoint, LocalPoint, ReferenceFrame};
use crate::rng::{sub_rng, Rng};

/// Default sensitivity: 90 km/h sustained over an 11 minute sampling gap.
pub const DEFAULT_SENSITIVITY_M: f64 = 16_500.0;
pub const DEFAULT_MAX_INNER_LOOPS: usize = 1000;
/// Number of candidate values per sampled SDD scalar.
pub const SDD_BINS: usize = 1024;
/// SDD gives up after this many full restarts of one trajectory.
pub const SDD_MAX_RESTARTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MechanismKind {
    CNoise,
    Sdd,
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::CNoise => "cnoise",
            MechanismKind::Sdd => "sdd",
        })
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cnoise" => Ok(MechanismKind::CNoise),
            "sdd" => Ok(MechanismKind::Sdd),
            other => Err(Error::config(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub epsilon: f64,
    pub sensitivity_m: f64,
    pub max_inner_loops: usize,
    pub rng_seed: u64,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind, epsilon: f64) -> Self {
        MechanismConfig {
            kind,
            epsilon,
            sensitivity_m: DEFAULT_SENSITIVITY_M,
            max_inner_loops: DEFAULT_MAX_INNER_LOOPS,
            rng_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.sensitivity_m > 0.0 && self.sensitivity_m.is_finite()) {
            return Err(Error::config(format!("sensitivity_m must be finite and > 0, got {}", self.sensitivity_m)));
        }
        if self.max_inner_loops == 0 {
            return Err(Error::config("max_inner_loops must be positive"));
        }
        Ok(())
    }

    /// Per-coordinate Laplace scale used by CNoise.
    pub fn cnoise_scale(&self) -> f64 {
        SQRT_2 * self.sensitivity_m / self.epsilon
    }

    /// Descriptor line `kind=<k> epsilon=<e> sensitivity_m=<M> seed=<s>`.
    pub fn descriptor(&self) -> String {
        format!(
            "kind={} epsilon={} sensitivity_m={} seed={}",
            self.kind, self.epsilon, self.sensitivity_m, self.rng_seed
        )
    }

    pub fn parse_descriptor(line: &str) -> Result<Self> {
        let mut kind = None;
        let mut epsilon = None;
        let mut sensitivity = None;
        let mut seed = None;
        for tok in line.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::format(format!("bad descriptor token {tok:?}")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::format(format!("bad number {v:?}")));
            match k {
                "kind" => kind = Some(v.parse::<MechanismKind>()?),
                "epsilon" => epsilon = Some(num(v)?),
                "sensitivity_m" => sensitivity = Some(num(v)?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| Error::format(format!("bad seed {v:?}")))?),
                _ => return Err(Error::format(format!("unknown descriptor key {k:?}"))),
            }
        }
        let missing = || Error::format(format!("incomplete mechanism descriptor {line:?}"));
        let cfg = MechanismConfig {
            kind: kind.ok_or_else(missing)?,
            epsilon: epsilon.ok_or_else(missing)?,
            sensitivity_m: sensitivity.ok_or_else(missing)?,
            max_inner_loops: DEFAULT_MAX_INNER_LOOPS,
            rng_seed: seed.ok_or_else(missing)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtectedPair {
    pub original: Trajectory,
    pub protected: Trajectory,
    pub mechanism: MechanismConfig,
}

/// Inverse CDF of Laplace(0, b) at `u ∈ (0, 1)`.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

/// One draw from Laplace(0, `scale`).
pub fn laplace_sample(rng: &mut Rng, scale: f64) -> f64 {
    let u = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    laplace_from_uniform(u, scale)
}

/// Exponential-mechanism selection probabilities,
/// `P(i) ∝ exp(ε·u_i / (2Δu))`, normalized after subtracting the max score.
pub fn exp_mech_probabilities(scores: &[f64], epsilon: f64, delta_u: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::domain("exponential mechanism over no outcomes"));
    }
    if !(delta_u > 0.0) {
        return Err(Error::domain(format!("sensitivity {delta_u} must be positive")));
    }
    if !(epsilon >= 0.0) || scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite score or negative epsilon"));
    }
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = epsilon / (2.0 * delta_u);
    let mut w: Vec<f64> = scores.iter().map(|s| (k * (s - top)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

fn sample_index(rng: &mut Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Samples an outcome index with the exponential mechanism.
pub fn exp_mech_sample(rng: &mut Rng, scores: &[f64], epsilon: f64, delta_u: f64) -> Result<usize> {
    let p = exp_mech_probabilities(scores, epsilon, delta_u)?;
    Ok(sample_index(rng, &p))
}

fn project(traj: &Trajectory, frame: &ReferenceFrame) -> Result<Vec<LocalPoint>> {
    traj.points
        .iter()
        .map(|p| {
            if !(p.lat.is_finite() && p.lon.is_finite()) {
                return Err(Error::domain(format!("non-finite coordinate in {}", traj.traj_id)));
            }
            Ok(to_local(frame, &GeoPoint::new_unchecked(p.lat, p.lon)))
        })
        .collect()
}

fn unproject(traj: &Trajectory, frame: &ReferenceFrame, local: &[LocalPoint]) -> Trajectory {
    let points = traj
        .points
        .iter()
        .zip(local)
        .map(|(orig, l)| {
            let g = to_geo(frame, l);
            RawPoint::new(g.lat(), g.lon(), orig.timestamp)
        })
        .collect();
    Trajectory { user_id: traj.user_id.clone(), traj_id: traj.traj_id.clone(), points }
}

/// Adds independent Laplace(√2·M/ε) noise to both planar coordinates of
/// every point.
pub fn cnoise(traj: &Trajectory, cfg: &MechanismConfig, frame: &ReferenceFrame, rng: &mut Rng) -> Result<Trajectory> {
    cfg.validate()?;
    let scale = cfg.cnoise_scale();
    let local: Vec<LocalPoint> = project(traj, frame)?
        .into_iter()
        .map(|p| {
            let dx = laplace_sample(rng, scale);
            let dy = laplace_sample(rng, scale);
            LocalPoint::new(p.x + dx, p.y + dy)
        })
        .collect();
    Ok(unproject(traj, frame, &local))
}

/// Discretized candidate values for SDD's distance and direction draws.
struct SddGrid {
    distances: Vec<f64>,
    bearings: Vec<f64>,
    scratch: Vec<f64>,
}

impl SddGrid {
    fn new(sensitivity: f64) -> Self {
        let k = SDD_BINS as f64;
        SddGrid {
            distances: (0..SDD_BINS).map(|i| (i as f64 + 0.5) * sensitivity / k).collect(),
            bearings: (0..SDD_BINS).map(|i| (i as f64 + 0.5) * TAU / k).collect(),
            scratch: vec![0.0; SDD_BINS],
        }
    }

    /// Draws a perturbed (distance, bearing) for the true step `from → to`.
    fn sample_step(
        &mut self,
        rng: &mut Rng,
        from: &LocalPoint,
        to: &LocalPoint,
        eps_step: f64,
        sensitivity: f64,
    ) -> Result<LocalPoint> {
        let (d_true, theta_true) = polar_between(from, to);
        let d_true = d_true.clamp(0.0, sensitivity);
        for (s, d) in self.scratch.iter_mut().zip(&self.distances) {
            *s = -(d - d_true).abs();
        }
        let d = self.distances[exp_mech_sample(rng, &self.scratch, eps_step, sensitivity)?];
        for (s, b) in self.scratch.iter_mut().zip(&self.bearings) {
            *s = -angular_distance(*b, theta_true);
        }
        let theta = self.bearings[exp_mech_sample(rng, &self.scratch, eps_step, PI)?];
        polar_step(from, d, theta)
    }
}

/// Output of [`sdd_local`].
#[derive(Debug, Clone)]
pub struct SddOutcome {
    pub points: Vec<LocalPoint>,
    pub restarts: usize,
}

/// SDD on planar points.
///
/// Intermediate points are drawn step by step from the previous published
/// point and accepted only while the true end point stays reachable with
/// steps of at most `M`. When `perturb_endpoints` is set, the first and last
/// points are republished from their published neighbours afterwards.
pub fn sdd_local(
    points: &[LocalPoint],
    cfg: &MechanismConfig,
    rng: &mut Rng,
    perturb_endpoints: bool,
) -> Result<SddOutcome> {
    cfg.validate()?;
    let n = points.len();
    if n < 3 {
        return Err(Error::domain(format!("SDD needs at least 3 points, got {n}")));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("SDD input contains non-finite coordinates"));
    }
    let m = cfg.sensitivity_m;
    let eps_step = cfg.epsilon / (2.0 * n as f64);
    let anchor = points[n - 1];
    let mut grid = SddGrid::new(m);

    let mut restarts = 0;
    let mut out = points.to_vec();
    'attempt: loop {
        for i in 1..n - 1 {
            // out[i - 1] is already published; remaining steps from i to n - 1
            let budget = (n - 1 - i) as f64 * m;
            let mut tries = 0;
            loop {
                let q = grid.sample_step(rng, &out[i - 1], &points[i], eps_step, m)?;
                if q.distance(&anchor) <= budget {
                    out[i] = q;
                    break;
                }
                tries += 1;
                if tries >= cfg.max_inner_loops {
                    restarts += 1;
                    if restarts >= SDD_MAX_RESTARTS {
                        return Err(Error::RestartLimit { restarts, len: n, inner_cap: cfg.max_inner_loops });
                    }
                    continue 'attempt;
                }
            }
        }
        break;
    }

    if perturb_endpoints {
        out[0] = grid.sample_step(rng, &out[1], &points[0], eps_step, m)?;
        out[n - 1] = grid.sample_step(rng, &out[n - 2], &points[n - 1], eps_step, m)?;
    }
    Ok(SddOutcome { points: out, restarts })
}

/// SDD on a geographic trajectory. Returns the protected trajectory and the
/// number of restarts it took.
pub fn sdd(
    traj: &Trajectory,
    cfg: &MechanismConfig,
    frame: &ReferenceFrame,
    rng: &mut Rng,
) -> Result<(Trajectory, usize)> {
    let local = project(traj, frame)?;
    let outcome = sdd_local(&local, cfg, rng, true)?;
    Ok((unproject(traj, frame, &outcome.points), outcome.restarts))
}

/// Applies one mechanism to a single trajectory.
pub fn protect(
    traj: &Trajectory,
    cfg: &MechanismConfig,
    frame: &ReferenceFrame,
    rng: &mut Rng,
) -> Result<(Trajectory, usize)> {
    match cfg.kind {
        MechanismKind::CNoise => Ok((cnoise(traj, cfg, frame, rng)?, 0)),
        MechanismKind::Sdd => sdd(traj, cfg, frame, rng),
    }
}

#[derive(Debug, Clone)]
pub struct ProtectedDataset {
    pub pairs: Vec<ProtectedPair>,
    /// SDD restarts per trajectory (all zero for CNoise).
    pub restarts: Vec<usize>,
}

/// Protects every trajectory with its own sub-seeded generator
/// (`mix_seed(rng_seed, index)`).
pub fn protect_dataset(
    trajs: &[Trajectory],
    cfg: &MechanismConfig,
    frame: &ReferenceFrame,
) -> Result<ProtectedDataset> {
    cfg.validate()?;
    let mut pairs = Vec::with_capacity(trajs.len());
    let mut restarts = Vec::with_capacity(trajs.len());
    for (i, t) in trajs.iter().enumerate() {
        let mut rng = sub_rng(cfg.rng_seed, i as u64);
        let (protected, r) = protect(t, cfg, frame, &mut rng)?;
        pairs.push(ProtectedPair { original: t.clone(), protected, mechanism: *cfg });
        restarts.push(r);
    }
    Ok(ProtectedDataset { pairs, restarts })
}
