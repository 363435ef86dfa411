//! C ABI over the `raopt` core.
//!
//! Conventions:
//! - every fallible function returns a [`RaoptStatus`]; results go through
//!   out-pointers, which are left untouched on failure;
//! - after a non-`Ok` status, [`raopt_last_error_message`] describes it
//!   (per thread);
//! - a trajectory is three parallel arrays (`lat`, `lon` in degrees,
//!   `timestamp` in UTC unix seconds) of length `len`; output arrays are
//!   caller-allocated with the same length;
//! - models are opaque handles created by [`raopt_model_load`] and released
//!   with [`raopt_model_free`].
//!
//! Panics never cross the boundary; they surface as `RAOPT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use raopt::dataio::{RawPoint, Trajectory};
use raopt::geo::{haversine_m, GeoPoint, ReferenceFrame};
use raopt::mechanisms::{protect, MechanismConfig, MechanismKind};
use raopt::metrics;
use raopt::model::{load_file, TrainedModel};
use raopt::rng::rng_from_seed;
use raopt::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaoptStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument is out of range or inconsistent (including bad
    /// coordinates and non-UTF-8 paths).
    InvalidArgument = 2,
    /// Malformed input file.
    Format = 3,
    /// Bad configuration value.
    Config = 4,
    /// Unreadable or incompatible checkpoint.
    Checkpoint = 5,
    Io = 6,
    /// SDD could not finish within its restart cap.
    RestartLimit = 7,
    /// A computation produced NaN or infinity.
    NonFinite = 8,
    /// Internal failure (a caught panic or a shape error).
    Panic = 9,
}

/// Mechanism selector for [`raopt_protect`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaoptMechanism {
    Cnoise = 0,
    Sdd = 1,
}

/// Opaque trained model.
pub struct RaoptModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RaoptStatus {
    match e {
        Error::Domain(_) => RaoptStatus::InvalidArgument,
        Error::Format(_) => RaoptStatus::Format,
        Error::Config(_) => RaoptStatus::Config,
        Error::Shape(_) => RaoptStatus::Panic,
        Error::NonFinite(_) | Error::Divergence { .. } => RaoptStatus::NonFinite,
        Error::RestartLimit { .. } => RaoptStatus::RestartLimit,
        Error::Checkpoint(_) => RaoptStatus::Checkpoint,
        Error::Io(_) => RaoptStatus::Io,
    }
}

/// Failure inside the wrapper itself, before reaching the core.
struct Fail(RaoptStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RaoptStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RaoptStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RaoptStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RaoptStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// As [`slice`]; a null `ts` means all timestamps are 0.
unsafe fn trajectory(lat: *const f64, lon: *const f64, ts: *const i64, len: usize) -> Result<Trajectory, Fail> {
    let lat = slice(lat, len, "lat")?;
    let lon = slice(lon, len, "lon")?;
    let ts = if ts.is_null() { None } else { Some(slice(ts, len, "timestamp")?) };
    let points = (0..len).map(|i| RawPoint::new(lat[i], lon[i], ts.map_or(0, |t| t[i]))).collect();
    Ok(Trajectory::new("ffi", "ffi", points))
}

/// # Safety
/// Output arrays must hold `t.len()` values.
unsafe fn write_out(t: &Trajectory, out_lat: *mut f64, out_lon: *mut f64) -> Result<(), Fail> {
    let la = slice_mut(out_lat, t.len(), "out_lat")?;
    let lo = slice_mut(out_lon, t.len(), "out_lon")?;
    for (i, p) in t.points.iter().enumerate() {
        la[i] = p.lat;
        lo[i] = p.lon;
    }
    Ok(())
}

/// # Safety
/// `p` must be null or writable.
unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn raopt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message (NUL-terminated,
/// truncated to fit) into `buf` and returns the full message length in
/// bytes excluding the terminator. Pass `buf = NULL` to query the length.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn raopt_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Great-circle distance in meters.
///
/// # Safety
/// `out_m` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn raopt_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64, out_m: *mut f64) -> RaoptStatus {
    guard(|| {
        let d = haversine_m(&GeoPoint::new_unchecked(lat1, lon1), &GeoPoint::new_unchecked(lat2, lon2))?;
        *out(out_m, "out_m")? = d;
        Ok(())
    })
}

/// Protects one trajectory. `frame_lat0`/`frame_lon0` are the projection
/// origin (normally the dataset's bounding-box midpoint); `seed` fixes the
/// noise. `sensitivity_m <= 0` and `max_inner_loops == 0` select the
/// defaults. `out_restarts` (optional) receives the SDD restart count.
///
/// # Safety
/// Input arrays must hold `len` values (`timestamp` may be null); output
/// arrays must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn raopt_protect(
    mechanism: RaoptMechanism,
    epsilon: f64,
    sensitivity_m: f64,
    max_inner_loops: usize,
    seed: u64,
    frame_lat0: f64,
    frame_lon0: f64,
    lat: *const f64,
    lon: *const f64,
    timestamp: *const i64,
    len: usize,
    out_lat: *mut f64,
    out_lon: *mut f64,
    out_restarts: *mut usize,
) -> RaoptStatus {
    guard(|| {
        let kind = match mechanism {
            RaoptMechanism::Cnoise => MechanismKind::CNoise,
            RaoptMechanism::Sdd => MechanismKind::Sdd,
        };
        let mut cfg = MechanismConfig::new(kind, epsilon).with_seed(seed);
        if sensitivity_m > 0.0 {
            cfg.sensitivity_m = sensitivity_m;
        }
        if max_inner_loops > 0 {
            cfg.max_inner_loops = max_inner_loops;
        }
        cfg.validate()?;
        let frame = ReferenceFrame::new(frame_lat0, frame_lon0)?;
        let t = trajectory(lat, lon, timestamp, len)?;
        let (p, restarts) = protect(&t, &cfg, &frame, &mut rng_from_seed(seed))?;
        write_out(&p, out_lat, out_lon)?;
        if let Some(r) = out_restarts.as_mut() {
            *r = restarts;
        }
        Ok(())
    })
}

/// Mean index-paired haversine distance (meters) of two equal-length
/// trajectories.
///
/// # Safety
/// Arrays must hold `len` values; `out_m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raopt_mean_euclidean(
    a_lat: *const f64,
    a_lon: *const f64,
    b_lat: *const f64,
    b_lon: *const f64,
    len: usize,
    out_m: *mut f64,
) -> RaoptStatus {
    guard(|| {
        let a = trajectory(a_lat, a_lon, ptr::null(), len)?;
        let b = trajectory(b_lat, b_lon, ptr::null(), len)?;
        *out(out_m, "out_m")? = metrics::mean_euclidean(&a, &b)?;
        Ok(())
    })
}

/// Symmetric Hausdorff distance (meters).
///
/// # Safety
/// `a_*` arrays must hold `a_len` values, `b_*` arrays `b_len`; `out_m`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn raopt_hausdorff(
    a_lat: *const f64,
    a_lon: *const f64,
    a_len: usize,
    b_lat: *const f64,
    b_lon: *const f64,
    b_len: usize,
    out_m: *mut f64,
) -> RaoptStatus {
    guard(|| {
        let a = trajectory(a_lat, a_lon, ptr::null(), a_len)?;
        let b = trajectory(b_lat, b_lon, ptr::null(), b_len)?;
        *out(out_m, "out_m")? = metrics::hausdorff(&a, &b)?;
        Ok(())
    })
}

/// Jaccard index of the two trajectories' convex hulls, projected around
/// (`frame_lat0`, `frame_lon0`).
///
/// # Safety
/// As [`raopt_hausdorff`]; `out_jaccard` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raopt_jaccard_hulls(
    frame_lat0: f64,
    frame_lon0: f64,
    a_lat: *const f64,
    a_lon: *const f64,
    a_len: usize,
    b_lat: *const f64,
    b_lon: *const f64,
    b_len: usize,
    out_jaccard: *mut f64,
) -> RaoptStatus {
    guard(|| {
        let frame = ReferenceFrame::new(frame_lat0, frame_lon0)?;
        let a = trajectory(a_lat, a_lon, ptr::null(), a_len)?;
        let b = trajectory(b_lat, b_lon, ptr::null(), b_len)?;
        *out(out_jaccard, "out_jaccard")? = metrics::jaccard_hulls(&a, &b, &frame);
        Ok(())
    })
}

/// Percentage reduction of `or_m` relative to `op_m`. Returns
/// `RAOPT_STATUS_INVALID_ARGUMENT` when `op_m == 0` (undefined).
///
/// # Safety
/// `out_pct` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raopt_pct_reduction(op_m: f64, or_m: f64, out_pct: *mut f64) -> RaoptStatus {
    guard(|| {
        let pct = metrics::pct_reduction(op_m, or_m)
            .ok_or_else(|| Fail(RaoptStatus::InvalidArgument, "reduction undefined for a zero OP distance".into()))?;
        *out(out_pct, "out_pct")? = pct;
        Ok(())
    })
}

/// Loads a checkpoint written by `raopt train`. On success `*out_model`
/// owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn raopt_model_load(path: *const c_char, out_model: *mut *mut RaoptModel) -> RaoptStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let slot = out(out_model, "out_model")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(RaoptStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = load_file(Path::new(path))?;
        *slot = Box::into_raw(Box::new(RaoptModel { inner }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`raopt_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn raopt_model_free(model: *mut RaoptModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Longest trajectory the model accepts, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn raopt_model_max_len(model: *const RaoptModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.encoder.max_len)
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn raopt_model_param_count(model: *const RaoptModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.param_count())
}

/// Reconstructs one protected trajectory. Timestamps feed the time
/// features; pass null to use the Unix epoch for every point.
///
/// # Safety
/// `model` must be a live handle; arrays as for [`raopt_protect`].
#[no_mangle]
pub unsafe extern "C" fn raopt_model_reconstruct(
    model: *const RaoptModel,
    lat: *const f64,
    lon: *const f64,
    timestamp: *const i64,
    len: usize,
    out_lat: *mut f64,
    out_lon: *mut f64,
) -> RaoptStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let t = trajectory(lat, lon, timestamp, len)?;
        let r = m.inner.reconstruct(std::slice::from_ref(&t))?;
        write_out(&r[0], out_lat, out_lon)
    })
}
