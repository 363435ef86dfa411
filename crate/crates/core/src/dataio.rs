//! Raw dataset parsing, sanitization and the canonical trajectory CSV.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};

use crate::error::{Error, Result};
use crate::geo::haversine_raw;

pub const CANONICAL_HEADER: &str = "user_id,traj_id,latitude,longitude,timestamp";

const PLT_HEADER_LINES: usize = 6;

/// One GPS fix: degrees and UTC unix seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    pub lat: f64,
    pub lon: f64,
    pub timestamp: i64,
}

impl RawPoint {
    pub fn new(lat: f64, lon: f64, timestamp: i64) -> Self {
        RawPoint { lat, lon, timestamp }
    }

    fn distance_m(&self, other: &RawPoint) -> f64 {
        haversine_raw(self.lat, self.lon, other.lat, other.lon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user_id: String,
    pub traj_id: String,
    pub points: Vec<RawPoint>,
}

impl Trajectory {
    pub fn new(user_id: impl Into<String>, traj_id: impl Into<String>, points: Vec<RawPoint>) -> Self {
        Trajectory { user_id: user_id.into(), traj_id: traj_id.into(), points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn with_points(&self, points: Vec<RawPoint>) -> Self {
        Trajectory { user_id: self.user_id.clone(), traj_id: self.traj_id.clone(), points }
    }

    fn sort_by_time(&mut self) {
        self.points.sort_by_key(|p| p.timestamp);
    }
}

/// Thresholds for [`preprocess`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub bbox_percentile: f64,
    pub max_speed_mps: f64,
    pub gap_seconds: i64,
    pub min_len: usize,
    pub max_len: usize,
}

impl PreprocessConfig {
    /// 99% box, 90 km/h, 11 min gaps, 10..=100 points.
    pub fn tdrive() -> Self {
        PreprocessConfig { bbox_percentile: 0.99, max_speed_mps: 25.0, gap_seconds: 660, min_len: 10, max_len: 100 }
    }

    /// 95% box, 100 km/h, 20 s gaps, 10..=200 points.
    pub fn geolife() -> Self {
        PreprocessConfig { bbox_percentile: 0.95, max_speed_mps: 27.78, gap_seconds: 20, min_len: 10, max_len: 200 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bbox_percentile > 0.0 && self.bbox_percentile <= 1.0) {
            return Err(Error::config(format!("bbox_percentile must lie in (0, 1], got {}", self.bbox_percentile)));
        }
        if self.min_len < 2 {
            return Err(Error::config("min_len must be at least 2"));
        }
        if self.max_len < self.min_len {
            return Err(Error::config("max_len must be >= min_len"));
        }
        if !(self.max_speed_mps > 0.0) {
            return Err(Error::config("max_speed_mps must be positive"));
        }
        if self.gap_seconds < 0 {
            return Err(Error::config("gap_seconds must be non-negative"));
        }
        Ok(())
    }
}

/// Result of parsing a raw dataset.
#[derive(Debug, Clone, Default)]
pub struct Parsed {
    pub trajectories: Vec<Trajectory>,
    pub good_lines: usize,
    pub malformed_lines: usize,
}

fn check_malformed_ratio(good: usize, bad: usize, what: &str) -> Result<()> {
    if bad > 0 && bad * 2 > good + bad {
        return Err(Error::format(format!("{what}: {bad} of {} lines malformed", good + bad)));
    }
    Ok(())
}

fn parse_datetime(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), "%Y-%m-%d %H:%M:%S").ok().map(|dt| dt.and_utc().timestamp())
}

fn parse_tdrive_line(line: &str) -> Option<(String, RawPoint)> {
    let mut it = line.split(',');
    let id = it.next()?.trim();
    let ts = parse_datetime(it.next()?)?;
    let lon: f64 = it.next()?.trim().parse().ok()?;
    let lat: f64 = it.next()?.trim().parse().ok()?;
    if it.next().is_some() || id.is_empty() || ts < 0 || !lat.is_finite() || !lon.is_finite() {
        return None;
    }
    Some((id.to_string(), RawPoint::new(lat, lon, ts)))
}

/// Parses T-Drive style lines `taxi_id,YYYY-MM-DD HH:MM:SS,lon,lat`.
///
/// Produces one trajectory per taxi, in order of first appearance, with
/// points sorted by time.
pub fn parse_tdrive<R: BufRead>(reader: R) -> Result<Parsed> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out = Parsed::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_tdrive_line(&line) {
            Some((id, p)) => {
                out.good_lines += 1;
                let slot = *index.entry(id.clone()).or_insert_with(|| {
                    out.trajectories.push(Trajectory::new(id.clone(), id, Vec::new()));
                    out.trajectories.len() - 1
                });
                out.trajectories[slot].points.push(p);
            }
            None => out.malformed_lines += 1,
        }
    }
    check_malformed_ratio(out.good_lines, out.malformed_lines, "t-drive input")?;
    for t in &mut out.trajectories {
        t.sort_by_time();
    }
    Ok(out)
}

fn parse_plt_line(line: &str) -> Option<RawPoint> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 7 {
        return None;
    }
    let lat: f64 = f[0].parse().ok()?;
    let lon: f64 = f[1].parse().ok()?;
    let date = NaiveDate::parse_from_str(f[5], "%Y-%m-%d").ok()?;
    let time = NaiveTime::parse_from_str(f[6], "%H:%M:%S").ok()?;
    let ts = date.and_time(time).and_utc().timestamp();
    if ts < 0 || !lat.is_finite() || !lon.is_finite() {
        return None;
    }
    Some(RawPoint::new(lat, lon, ts))
}

/// Parses the body of one PLT file (six header lines, then data rows).
pub fn parse_plt<R: Read>(reader: R, user_id: &str, traj_id: &str) -> Result<(Trajectory, usize, usize)> {
    let mut lines = BufReader::new(reader).lines();
    for i in 0..PLT_HEADER_LINES {
        match lines.next() {
            Some(l) => {
                l?;
            }
            None => {
                return Err(Error::format(format!(
                    "{user_id}/{traj_id}: expected {PLT_HEADER_LINES} header lines, found {i}"
                )))
            }
        }
    }
    let (mut good, mut bad) = (0, 0);
    let mut points = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_plt_line(&line) {
            Some(p) => {
                good += 1;
                points.push(p);
            }
            None => bad += 1,
        }
    }
    let mut t = Trajectory::new(user_id, traj_id, points);
    t.sort_by_time();
    Ok((t, good, bad))
}

fn collect_plt_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_plt_files(&path, out)?;
        } else if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("plt")) {
            out.push(path);
        }
    }
    Ok(())
}

/// Parses a GeoLife-style tree: one directory per user containing `.plt`
/// files (directly or under `Trajectory/`). One trajectory per file.
pub fn parse_geolife(root: &Path) -> Result<Parsed> {
    let mut users: Vec<_> =
        fs::read_dir(root)?.collect::<std::io::Result<Vec<_>>>()?.into_iter().filter(|e| e.path().is_dir()).collect();
    users.sort_by_key(|e| e.file_name());
    let mut out = Parsed::default();
    for user in users {
        let user_id = user.file_name().to_string_lossy().into_owned();
        let mut files = Vec::new();
        collect_plt_files(&user.path(), &mut files)?;
        for file in files {
            let traj_id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (t, good, bad) = parse_plt(fs::File::open(&file)?, &user_id, &traj_id)?;
            out.good_lines += good;
            out.malformed_lines += bad;
            out.trajectories.push(t);
        }
    }
    check_malformed_ratio(out.good_lines, out.malformed_lines, "geolife input")?;
    Ok(out)
}

/// Axis-aligned box in degrees, inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    pub fn contains(&self, p: &RawPoint) -> bool {
        p.lat >= self.lat_min && p.lat <= self.lat_max && p.lon >= self.lon_min && p.lon <= self.lon_max
    }

    /// Tight box around every point of `trajs`.
    pub fn of(trajs: &[Trajectory]) -> Option<Self> {
        let mut it = trajs.iter().flat_map(|t| t.points.iter());
        let first = it.next()?;
        let mut b = BoundingBox { lat_min: first.lat, lat_max: first.lat, lon_min: first.lon, lon_max: first.lon };
        for p in it {
            b.lat_min = b.lat_min.min(p.lat);
            b.lat_max = b.lat_max.max(p.lat);
            b.lon_min = b.lon_min.min(p.lon);
            b.lon_max = b.lon_max.max(p.lon);
        }
        Some(b)
    }
}

/// Central `q` range of sorted values: ranks are rounded inward on the
/// `(n - 1)` index scale.
fn central_range(sorted: &[f64], q: f64) -> (f64, f64) {
    let last = (sorted.len() - 1) as f64;
    let lo = ((1.0 - q) / 2.0 * last).ceil() as usize;
    let hi = ((1.0 + q) / 2.0 * last).floor() as usize;
    let hi = hi.min(sorted.len() - 1).max(lo);
    (sorted[lo], sorted[hi])
}

/// Removes points outside the per-axis central `percentile` box of the whole
/// dataset. Trajectories left empty are dropped.
pub fn filter_bbox(trajs: &[Trajectory], percentile: f64) -> Result<(Vec<Trajectory>, BoundingBox)> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(Error::domain(format!("percentile {percentile} outside (0, 1]")));
    }
    let mut lats: Vec<f64> = trajs.iter().flat_map(|t| t.points.iter().map(|p| p.lat)).collect();
    if lats.is_empty() {
        return Err(Error::domain("bounding box of an empty dataset"));
    }
    let mut lons: Vec<f64> = trajs.iter().flat_map(|t| t.points.iter().map(|p| p.lon)).collect();
    lats.sort_by(f64::total_cmp);
    lons.sort_by(f64::total_cmp);
    let (lat_min, lat_max) = central_range(&lats, percentile);
    let (lon_min, lon_max) = central_range(&lons, percentile);
    let bbox = BoundingBox { lat_min, lat_max, lon_min, lon_max };
    let kept = trajs
        .iter()
        .map(|t| t.with_points(t.points.iter().copied().filter(|p| bbox.contains(p)).collect()))
        .filter(|t| !t.is_empty())
        .collect();
    Ok((kept, bbox))
}

/// Resolves equal timestamps: exact duplicates keep their first copy; among
/// differing locations at one timestamp the point farthest from its
/// neighbours (previous + next) is dropped until one remains.
pub fn dedupe(traj: &Trajectory) -> Trajectory {
    let pts = &traj.points;
    let mut out: Vec<RawPoint> = Vec::with_capacity(pts.len());
    let mut i = 0;
    while i < pts.len() {
        let mut j = i + 1;
        while j < pts.len() && pts[j].timestamp == pts[i].timestamp {
            j += 1;
        }
        let mut group: Vec<RawPoint> = Vec::with_capacity(j - i);
        for p in &pts[i..j] {
            if !group.iter().any(|g| g.lat == p.lat && g.lon == p.lon) {
                group.push(*p);
            }
        }
        let chosen = if group.len() == 1 {
            group[0]
        } else {
            let prev = out.last().copied();
            let next = pts.get(j).copied();
            let score = |p: &RawPoint| prev.map_or(0.0, |q| p.distance_m(&q)) + next.map_or(0.0, |q| p.distance_m(&q));
            // smallest score wins; first occurrence on ties
            let mut best = group[0];
            let mut best_score = score(&best);
            for p in &group[1..] {
                let s = score(p);
                if s < best_score {
                    best = *p;
                    best_score = s;
                }
            }
            best
        };
        out.push(chosen);
        i = j;
    }
    traj.with_points(out)
}

/// Greedy forward pass dropping points reached from the last kept point
/// faster than `max_speed_mps`.
pub fn filter_speed(traj: &Trajectory, max_speed_mps: f64) -> Trajectory {
    let mut out: Vec<RawPoint> = Vec::with_capacity(traj.len());
    for p in &traj.points {
        match out.last() {
            None => out.push(*p),
            Some(last) => {
                let dt = (p.timestamp - last.timestamp) as f64;
                let d = p.distance_m(last);
                let too_fast = if dt > 0.0 { d / dt > max_speed_mps } else { d > 0.0 };
                if !too_fast {
                    out.push(*p);
                }
            }
        }
    }
    traj.with_points(out)
}

/// Cuts wherever consecutive timestamps differ by more than `gap_seconds`.
/// Pieces get ids `<traj_id>_<k>`.
pub fn split_by_gap(traj: &Trajectory, gap_seconds: i64) -> Vec<Trajectory> {
    let mut pieces: Vec<Vec<RawPoint>> = Vec::new();
    for p in &traj.points {
        match pieces.last_mut() {
            Some(cur) if p.timestamp - cur.last().unwrap().timestamp <= gap_seconds => cur.push(*p),
            _ => pieces.push(vec![*p]),
        }
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(k, pts)| Trajectory::new(traj.user_id.clone(), format!("{}_{k}", traj.traj_id), pts))
        .collect()
}

pub fn filter_length(trajs: Vec<Trajectory>, min_len: usize, max_len: usize) -> Vec<Trajectory> {
    trajs.into_iter().filter(|t| (min_len..=max_len).contains(&t.len())).collect()
}

/// Point counts for one preprocessing stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageCount {
    pub stage: &'static str,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub input_points: usize,
    pub bbox: Option<BoundingBox>,
    pub stages: Vec<StageCount>,
}

impl fmt::Display for PreprocessSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.stages {
            writeln!(f, "stage={} kept={} dropped={}", s.stage, s.kept, s.dropped)?;
        }
        Ok(())
    }
}

fn count_points(trajs: &[Trajectory]) -> usize {
    trajs.iter().map(Trajectory::len).sum()
}

/// bbox → dedupe → speed → split → length.
pub fn preprocess(trajs: &[Trajectory], cfg: &PreprocessConfig) -> Result<(Vec<Trajectory>, PreprocessSummary)> {
    cfg.validate()?;
    let input_points = count_points(trajs);
    let mut summary = PreprocessSummary { input_points, bbox: None, stages: Vec::new() };
    if input_points == 0 {
        for stage in ["bbox", "dedupe", "speed", "split", "length"] {
            summary.stages.push(StageCount { stage, kept: 0, dropped: 0 });
        }
        return Ok((Vec::new(), summary));
    }

    let mut record = |stage, before: usize, after: &[Trajectory]| {
        let kept = count_points(after);
        summary.stages.push(StageCount { stage, kept, dropped: before - kept });
        kept
    };

    let mut sorted: Vec<Trajectory> = trajs.iter().filter(|t| !t.is_empty()).cloned().collect();
    sorted.iter_mut().for_each(Trajectory::sort_by_time);
    let (cur, bbox) = filter_bbox(&sorted, cfg.bbox_percentile)?;
    let n = record("bbox", input_points, &cur);

    let cur: Vec<Trajectory> = cur.iter().map(dedupe).collect();
    let n = record("dedupe", n, &cur);

    let cur: Vec<Trajectory> = cur.iter().map(|t| filter_speed(t, cfg.max_speed_mps)).collect();
    let n = record("speed", n, &cur);

    let cur: Vec<Trajectory> = cur.iter().flat_map(|t| split_by_gap(t, cfg.gap_seconds)).collect();
    let n = record("split", n, &cur);

    let cur = filter_length(cur, cfg.min_len, cfg.max_len);
    record("length", n, &cur);

    summary.bbox = Some(bbox);
    Ok((cur, summary))
}

fn check_field(s: &str, what: &str) -> Result<()> {
    if s.contains([',', '\n', '\r']) {
        return Err(Error::format(format!("{what} {s:?} contains a separator")));
    }
    Ok(())
}

/// Writes the canonical CSV (coordinates with 7 decimals).
pub fn write_canonical<W: Write>(trajs: &[Trajectory], mut sink: W) -> Result<()> {
    writeln!(sink, "{CANONICAL_HEADER}")?;
    for t in trajs {
        check_field(&t.user_id, "user_id")?;
        check_field(&t.traj_id, "traj_id")?;
        for p in &t.points {
            writeln!(sink, "{},{},{:.7},{:.7},{}", t.user_id, t.traj_id, p.lat, p.lon, p.timestamp)?;
        }
    }
    sink.flush()?;
    Ok(())
}

/// Reads the canonical CSV. Consecutive rows sharing `(user_id, traj_id)`
/// form one trajectory.
pub fn read_canonical<R: BufRead>(source: R) -> Result<Vec<Trajectory>> {
    let mut lines = source.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == CANONICAL_HEADER => {}
        Some(_) => return Err(Error::format("canonical CSV: unexpected header")),
        None => return Err(Error::format("canonical CSV: missing header")),
    }
    let mut out: Vec<Trajectory> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format(format!("canonical CSV line {}: {line:?}", lineno + 2));
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let lat: f64 = f[2].parse().map_err(|_| bad())?;
        let lon: f64 = f[3].parse().map_err(|_| bad())?;
        let ts: i64 = f[4].parse().map_err(|_| bad())?;
        let p = RawPoint::new(lat, lon, ts);
        match out.last_mut() {
            Some(t) if t.user_id == f[0] && t.traj_id == f[1] => t.points.push(p),
            _ => out.push(Trajectory::new(f[0], f[1], vec![p])),
        }
    }
    Ok(out)
}

pub fn write_canonical_file(trajs: &[Trajectory], path: &Path) -> Result<()> {
    let f = fs::File::create(path)?;
    write_canonical(trajs, std::io::BufWriter::new(f))
}

pub fn read_canonical_file(path: &Path) -> Result<Vec<Trajectory>> {
    let f = fs::File::open(path)?;
    read_canonical(BufReader::new(f))
}
