//! Trajectory distances, convex-hull Jaccard index and reduction statistics.

use std::io::Write;

use crate::dataio::Trajectory;
use crate::error::{Error, Result};
use crate::geo::{haversine_m, to_local, GeoPoint, LocalPoint, ReferenceFrame};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.576;

pub const RESULT_HEADER: &str = "id,dataset_train,dataset_test,mech_train,mech_test,eps_train,eps_test,euclid_reduction_pct,hausdorff_reduction_pct,jaccard_before,jaccard_after";
pub const RECORD_HEADER: &str = "traj_id,op_euclid,or_euclid,op_hausdorff,or_hausdorff,jaccard_before,jaccard_after";

fn geo(p: &crate::dataio::RawPoint) -> GeoPoint {
    GeoPoint::new_unchecked(p.lat, p.lon)
}

/// Mean index-paired haversine distance, meters.
pub fn mean_euclidean(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::domain("mean distance of empty trajectories"));
    }
    let mut sum = 0.0;
    for (p, q) in a.points.iter().zip(&b.points) {
        sum += haversine_m(&geo(p), &geo(q))?;
    }
    Ok(sum / a.len() as f64)
}

fn directed_hausdorff(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in &a.points {
        let mut best = f64::INFINITY;
        for q in &b.points {
            best = best.min(haversine_m(&geo(p), &geo(q))?);
        }
        worst = worst.max(best);
    }
    Ok(worst)
}

/// Symmetric Hausdorff distance over haversine, meters. Exact, O(n·m).
pub fn hausdorff(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("Hausdorff distance of an empty trajectory"));
    }
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon {
    pub vertices: Vec<LocalPoint>,
}

fn cross(o: &LocalPoint, a: &LocalPoint, b: &LocalPoint) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

impl Polygon {
    /// Shoelace area (positive for counter-clockwise vertices).
    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        if v.len() < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..v.len() {
            let j = (i + 1) % v.len();
            s += v[i].x * v[j].y - v[j].x * v[i].y;
        }
        s / 2.0
    }

    /// True when `p` is inside or within `tol` of the boundary.
    pub fn contains(&self, p: &LocalPoint, tol: f64) -> bool {
        let v = &self.vertices;
        match v.len() {
            0 => false,
            1 => v[0].distance(p) <= tol,
            _ => (0..v.len()).all(|i| {
                let a = &v[i];
                let b = &v[(i + 1) % v.len()];
                let len = a.distance(b);
                len == 0.0 || cross(a, b, p) / len >= -tol
            }),
        }
    }
}

/// Andrew's monotone chain. Collinear boundary points are dropped.
pub fn convex_hull(points: &[LocalPoint]) -> Polygon {
    let mut pts: Vec<LocalPoint> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Polygon { vertices: pts };
    }
    let mut hull: Vec<LocalPoint> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    Polygon { vertices: hull }
}

/// Intersection of two convex polygons (Sutherland–Hodgman, `clip` as the
/// clipping window).
pub fn clip_convex(subject: &Polygon, clip: &Polygon) -> Polygon {
    if subject.vertices.len() < 3 || clip.vertices.len() < 3 {
        return Polygon::default();
    }
    let mut output = subject.vertices.clone();
    let c = &clip.vertices;
    for i in 0..c.len() {
        if output.is_empty() {
            break;
        }
        let a = c[i];
        let b = c[(i + 1) % c.len()];
        let input = std::mem::take(&mut output);
        let inside = |p: &LocalPoint| cross(&a, &b, p) >= 0.0;
        let intersect = |p: &LocalPoint, q: &LocalPoint| {
            let cp = cross(&a, &b, p);
            let cq = cross(&a, &b, q);
            let t = cp / (cp - cq);
            LocalPoint::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
        };
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            match (inside(&cur), inside(&prev)) {
                (true, true) => output.push(cur),
                (true, false) => {
                    output.push(intersect(&prev, &cur));
                    output.push(cur);
                }
                (false, true) => output.push(intersect(&prev, &cur)),
                (false, false) => {}
            }
        }
    }
    Polygon { vertices: output }
}

/// Jaccard index of two hulls. When the union has zero area the index is 1
/// for identical vertex sets and 0 otherwise.
pub fn jaccard_polygons(a: &Polygon, b: &Polygon) -> f64 {
    let area_a = a.area();
    let area_b = b.area();
    let inter = clip_convex(a, b).area().max(0.0);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return if a.vertices == b.vertices { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Jaccard index of the convex hulls of two trajectories, computed in the
/// local projection of `frame`.
pub fn jaccard_hulls(a: &Trajectory, b: &Trajectory, frame: &ReferenceFrame) -> f64 {
    let hull = |t: &Trajectory| {
        let pts: Vec<LocalPoint> = t.points.iter().map(|p| to_local(frame, &geo(p))).collect();
        convex_hull(&pts)
    };
    jaccard_polygons(&hull(a), &hull(b))
}

/// `(OP − OR) / |OP| · 100`; `None` when `op` is zero.
pub fn pct_reduction(op: f64, or: f64) -> Option<f64> {
    if op == 0.0 {
        None
    } else {
        Some((op - or) / op.abs() * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub traj_id: String,
    pub op_euclid: f64,
    pub or_euclid: f64,
    pub op_hausdorff: f64,
    pub or_hausdorff: f64,
    pub jaccard_before: f64,
    pub jaccard_after: f64,
}

/// Scores one reconstruction against its original and protected versions.
pub fn evaluate(
    original: &Trajectory,
    protected: &Trajectory,
    reconstructed: &Trajectory,
    frame: &ReferenceFrame,
) -> Result<EvalRecord> {
    Ok(EvalRecord {
        traj_id: original.traj_id.clone(),
        op_euclid: mean_euclidean(original, protected)?,
        or_euclid: mean_euclidean(original, reconstructed)?,
        op_hausdorff: hausdorff(original, protected)?,
        or_hausdorff: hausdorff(original, reconstructed)?,
        jaccard_before: jaccard_hulls(original, protected, frame),
        jaccard_after: jaccard_hulls(original, reconstructed, frame),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean_euclid_reduction_pct: f64,
    pub mean_hausdorff_reduction_pct: f64,
    pub mean_jaccard_before: f64,
    pub mean_jaccard_after: f64,
    pub ci99_euclid: f64,
    pub ci99_hausdorff: f64,
    pub n: usize,
    /// Records left out of a reduction mean because their OP distance was 0.
    pub excluded_euclid: usize,
    pub excluded_hausdorff: usize,
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Z_99 * var.sqrt() / n.sqrt())
}

/// Sample mean and 99% normal-approximation half-width.
pub fn mean_ci99(values: &[f64]) -> (f64, f64) {
    mean_and_ci(values)
}

/// Aggregates per-record reductions; Jaccard before/after are averaged
/// separately.
pub fn summarize(records: &[EvalRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::domain("summary of zero records"));
    }
    let euclid: Vec<f64> = records.iter().filter_map(|r| pct_reduction(r.op_euclid, r.or_euclid)).collect();
    let haus: Vec<f64> = records.iter().filter_map(|r| pct_reduction(r.op_hausdorff, r.or_hausdorff)).collect();
    let (me, ce) = mean_and_ci(&euclid);
    let (mh, ch) = mean_and_ci(&haus);
    let n = records.len() as f64;
    Ok(Summary {
        mean_euclid_reduction_pct: me,
        mean_hausdorff_reduction_pct: mh,
        mean_jaccard_before: records.iter().map(|r| r.jaccard_before).sum::<f64>() / n,
        mean_jaccard_after: records.iter().map(|r| r.jaccard_after).sum::<f64>() / n,
        ci99_euclid: ce,
        ci99_hausdorff: ch,
        n: records.len(),
        excluded_euclid: records.len() - euclid.len(),
        excluded_hausdorff: records.len() - haus.len(),
    })
}

pub fn write_records<W: Write>(records: &[EvalRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(
            sink,
            "{},{},{},{},{},{},{}",
            r.traj_id, r.op_euclid, r.or_euclid, r.op_hausdorff, r.or_hausdorff, r.jaccard_before, r.jaccard_after
        )?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::BufRead>(source: R) -> Result<Vec<EvalRecord>> {
    let mut lines = source.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == RECORD_HEADER => {}
        _ => return Err(Error::format("record CSV: unexpected header")),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 7 {
            return Err(Error::format(format!("record CSV: bad line {line:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(format!("record CSV: bad number {s:?}")));
        out.push(EvalRecord {
            traj_id: f[0].to_string(),
            op_euclid: num(f[1])?,
            or_euclid: num(f[2])?,
            op_hausdorff: num(f[3])?,
            or_hausdorff: num(f[4])?,
            jaccard_before: num(f[5])?,
            jaccard_after: num(f[6])?,
        });
    }
    Ok(out)
}

/// One row of the result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub id: String,
    pub dataset_train: String,
    pub dataset_test: String,
    pub mech_train: String,
    pub mech_test: String,
    pub eps_train: f64,
    pub eps_test: f64,
    /// `None` marks a failed experiment.
    pub summary: Option<Summary>,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let prefix = format!(
            "{},{},{},{},{},{},{}",
            self.id,
            self.dataset_train,
            self.dataset_test,
            self.mech_train,
            self.mech_test,
            self.eps_train,
            self.eps_test
        );
        match &self.summary {
            Some(s) => format!(
                "{prefix},{:.4},{:.4},{:.6},{:.6}",
                s.mean_euclid_reduction_pct,
                s.mean_hausdorff_reduction_pct,
                s.mean_jaccard_before,
                s.mean_jaccard_after
            ),
            None => format!("{prefix},failed,failed,failed,failed"),
        }
    }
}
