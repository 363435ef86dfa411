//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use raopt::dataio::{RawPoint, Trajectory};
use raopt::geo::LocalPoint;
use raopt::metrics::Polygon;

/// Oracle RNG, deliberately a different generator from the library's.
pub fn oracle_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn laplace_cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// One-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of a KS statistic `d` over `n` samples, with the
/// Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as usize % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

pub fn random_cloud(rng: &mut ChaCha20Rng, n: usize, spread: f64) -> Vec<LocalPoint> {
    let (cx, cy) = (rng.random_range(-spread..spread), rng.random_range(-spread..spread));
    (0..n)
        .map(|_| LocalPoint::new(cx + rng.random_range(-spread..spread), cy + rng.random_range(-spread..spread)))
        .collect()
}

/// Brute force: every input lies on the inner side of every hull edge.
pub fn hull_contains_all(hull: &Polygon, points: &[LocalPoint], tol: f64) -> bool {
    let v = &hull.vertices;
    if v.len() < 3 {
        return false;
    }
    points.iter().all(|p| {
        (0..v.len()).all(|i| {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            cross >= -tol * a.distance(&b)
        })
    })
}

/// Monte-Carlo area of `a ∩ b` over their joint bounding box.
pub fn mc_intersection_area(a: &Polygon, b: &Polygon, samples: usize, rng: &mut ChaCha20Rng) -> f64 {
    let all: Vec<&LocalPoint> = a.vertices.iter().chain(&b.vertices).collect();
    let x0 = all.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = all.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let y1 = all.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = LocalPoint::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
        if a.contains(&p, 0.0) && b.contains(&p, 0.0) {
            hits += 1;
        }
    }
    hits as f64 / samples as f64 * (x1 - x0) * (y1 - y0)
}

/// A short random walk of lat/lon points near Beijing.
pub fn random_trajectory(rng: &mut ChaCha20Rng, id: usize, len: usize) -> Trajectory {
    let mut lat = rng.random_range(39.85..39.95);
    let mut lon = rng.random_range(116.3..116.5);
    let points = (0..len)
        .map(|i| {
            lat += rng.random_range(-0.003..0.003);
            lon += rng.random_range(-0.003..0.003);
            RawPoint::new(lat, lon, 1_300_000_000 + 60 * i as i64)
        })
        .collect();
    Trajectory::new("u", format!("t{id}"), points)
}

pub struct OracleDistance {
    pub lat1: f64,
    pub lon1: f64,
    pub lat2: f64,
    pub lon2: f64,
    pub meters: f64,
}

/// Pairs with distances computed at 40 digits (see `haversine_oracle.py`).
pub fn haversine_oracle() -> Vec<OracleDistance> {
    let text = std::fs::read_to_string(data_path("haversine_oracle.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            OracleDistance { lat1: v[0], lon1: v[1], lat2: v[2], lon2: v[3], meters: v[4] }
        })
        .collect()
}
