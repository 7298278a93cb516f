//! C ABI over the `ergostat` library.
//!
//! Samples, models and calibrations are opaque handles created by
//! `ergo_*_new`/`ergo_*_load` style functions and released with the matching
//! `ergo_*_free`. Every fallible call returns an [`ErgoStatus`]; on failure
//! [`ergo_last_error_message`] describes the error on the calling thread.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ergostat::changepoint::{estimate_changepoint_with, scan_range, Boundary};
use ergostat::{
    calibrate_gamma, classify, dhat, dhat_model, gof_test, model_distance, CellIndex, DistanceValue, Error,
    GofConfig, PartitionLevel, ProcessModel, Sample, WeightScheme,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErgoStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid parameters, model specification or scheme.
    InvalidArgument = 2,
    /// Input too short or otherwise outside the supported range.
    Range = 3,
    /// The model cannot answer the query (for example exact probabilities
    /// from a Monte Carlo oracle).
    Capability = 4,
    Io = 5,
    Parse = 6,
    /// A buffer supplied by the caller is too small.
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque sample of finite reals.
pub struct ErgoSample(Sample);

/// Opaque process model.
pub struct ErgoModel(ProcessModel);

/// Opaque calibrated goodness-of-fit threshold.
pub struct ErgoCalibration(ergostat::Calibration);

/// Truncation of the distance: tuple lengths `1..=m_max`, resolutions `0..=l_max`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ErgoScheme {
    pub m_max: usize,
    pub l_max: u32,
}

/// A truncated distance; the untruncated value lies in `[value, value + tail_bound]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ErgoDistance {
    pub value: f64,
    pub tail_bound: f64,
    pub m_max: usize,
    pub l_max: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ErgoGofResult {
    /// 1 when H0 is rejected.
    pub reject: i32,
    pub statistic: ErgoDistance,
    pub gamma_hat: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ErgoClassification {
    /// 1 when z is assigned to x's law, 2 for y's.
    pub label: u8,
    pub d_xz: ErgoDistance,
    pub d_yz: ErgoDistance,
    /// 1 when the truncation bound certifies the order of the two distances.
    pub certified: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ErgoChangePoint {
    pub k_hat: usize,
    pub boundary: usize,
    pub n: usize,
    /// Scan value at `k_hat`.
    pub dhat_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ErgoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Range(_) => ErgoStatus::Range,
            Error::Capability(_) => ErgoStatus::Capability,
            Error::Io(_) | Error::Csv(_) => ErgoStatus::Io,
            Error::Parse { .. } | Error::Json(_) => ErgoStatus::Parse,
            _ => ErgoStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(ErgoStatus::NullPointer, format!("{what} is NULL"))
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ErgoStatus {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ErgoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            ErgoStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: caller guarantees `p` is NULL or a live handle of type T.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller guarantees `p` is NULL or valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(ErgoStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn scheme(s: ErgoScheme) -> Result<WeightScheme, Failure> {
    Ok(WeightScheme::new(s.m_max, s.l_max)?)
}

fn distance(d: &DistanceValue) -> ErgoDistance {
    ErgoDistance {
        value: d.value,
        tail_bound: d.tail_bound,
        m_max: d.m_max,
        l_max: d.l_max,
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ergo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ergo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The default truncation, `m_max = 3`, `l_max = 8`.
#[no_mangle]
pub extern "C" fn ergo_scheme_default() -> ErgoScheme {
    let d = WeightScheme::default();
    ErgoScheme {
        m_max: d.m_max,
        l_max: d.l_max,
    }
}

/// Copies `len` values into a new sample. Rejects non-finite values.
///
/// # Safety
/// `values` must point to `len` readable doubles (it may be NULL when `len`
/// is 0); `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_sample_new(values: *const f64, len: usize, out: *mut *mut ErgoSample) -> ErgoStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let slice = if len == 0 {
            &[][..]
        } else if values.is_null() {
            return Err(null("values"));
        } else {
            // SAFETY: caller guarantees `len` readable values.
            unsafe { std::slice::from_raw_parts(values, len) }
        };
        *out = boxed(ErgoSample(Sample::from_slice(slice)?));
        Ok(())
    })
}

/// Reads a sample from a text file (one value per line), or from the named
/// column of a headed CSV file when `column` is not NULL.
///
/// # Safety
/// `path` and `column` (if not NULL) must be NUL-terminated strings; `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_sample_read(
    path: *const c_char,
    column: *const c_char,
    out: *mut *mut ErgoSample,
) -> ErgoStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let path = unsafe { c_str(path, "path") }?;
        let column = if column.is_null() { None } else { Some(unsafe { c_str(column, "column") }?) };
        *out = boxed(ErgoSample(ergostat::sample::read_sample(Path::new(path), column)?));
        Ok(())
    })
}

/// Number of values in the sample; 0 for NULL.
///
/// # Safety
/// `sample` must be NULL or a live sample handle.
#[no_mangle]
pub unsafe extern "C" fn ergo_sample_len(sample: *const ErgoSample) -> usize {
    // SAFETY: caller guarantees a live handle or NULL.
    unsafe { sample.as_ref() }.map_or(0, |s| s.0.len())
}

/// Copies the sample into `buf`, which must hold at least
/// `ergo_sample_len(sample)` values.
///
/// # Safety
/// `sample` must be a live handle; `buf` must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_sample_copy(sample: *const ErgoSample, buf: *mut f64, cap: usize) -> ErgoStatus {
    guard(|| {
        let s = unsafe { as_ref(sample, "sample") }?;
        let values = s.0.values();
        if values.is_empty() {
            return Ok(());
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < values.len() {
            return Err(Failure(
                ErgoStatus::BufferTooSmall,
                format!("buffer holds {cap} values, sample has {}", values.len()),
            ));
        }
        // SAFETY: `buf` has room for `values.len()` doubles and does not
        // overlap the sample's own storage.
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len()) };
        Ok(())
    })
}

/// # Safety
/// `sample` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ergo_sample_free(sample: *mut ErgoSample) {
    if !sample.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(sample) });
    }
}

/// Parses a JSON model specification.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_model_from_json(json: *const c_char, out: *mut *mut ErgoModel) -> ErgoStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let text = unsafe { c_str(json, "json") }?;
        *out = boxed(ErgoModel(ProcessModel::from_json(text)?));
        Ok(())
    })
}

/// Loads a model specification file (`.json` as JSON, anything else as TOML).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_model_load(path: *const c_char, out: *mut *mut ErgoModel) -> ErgoStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out") }?;
        let path = unsafe { c_str(path, "path") }?;
        *out = boxed(ErgoModel(ProcessModel::load(Path::new(path))?));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ergo_model_free(model: *mut ErgoModel) {
    if !model.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Draws a stationary sample of length `n`; the result depends only on the
/// model, `n` and `seed`.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_model_sample(
    model: *const ErgoModel,
    n: usize,
    seed: u64,
    out: *mut *mut ErgoSample,
) -> ErgoStatus {
    guard(|| {
        let model = unsafe { as_ref(model, "model") }?;
        let out = unsafe { out_ref(out, "out") }?;
        *out = boxed(ErgoSample(model.0.sample(n, seed)?));
        Ok(())
    })
}

/// Exact stationary probability of the dyadic cell `cell[0..m]` at
/// resolution `l`.
///
/// # Safety
/// `model` must be a live handle; `cell` must point to `m` readable values;
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_model_cell_prob(
    model: *const ErgoModel,
    cell: *const i64,
    m: usize,
    l: u32,
    out: *mut f64,
) -> ErgoStatus {
    guard(|| {
        let model = unsafe { as_ref(model, "model") }?;
        let out = unsafe { out_ref(out, "out") }?;
        if cell.is_null() {
            return Err(null("cell"));
        }
        // SAFETY: caller guarantees `m` readable coordinates.
        let coords = unsafe { std::slice::from_raw_parts(cell, m) };
        *out = model.0.cell_prob(&CellIndex::new(coords), PartitionLevel::new(m, l)?)?;
        Ok(())
    })
}

/// d̂ between two samples.
///
/// # Safety
/// `x`, `y` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_dhat(
    x: *const ErgoSample,
    y: *const ErgoSample,
    scheme_: ErgoScheme,
    out: *mut ErgoDistance,
) -> ErgoStatus {
    guard(|| {
        let (x, y) = unsafe { (as_ref(x, "x")?, as_ref(y, "y")?) };
        let out = unsafe { out_ref(out, "out") }?;
        *out = distance(&dhat(&x.0, &y.0, &scheme(scheme_)?)?);
        Ok(())
    })
}

/// d̂ between a sample and a model.
///
/// # Safety
/// `x`, `model` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_dhat_model(
    x: *const ErgoSample,
    model: *const ErgoModel,
    scheme_: ErgoScheme,
    out: *mut ErgoDistance,
) -> ErgoStatus {
    guard(|| {
        let (x, model) = unsafe { (as_ref(x, "x")?, as_ref(model, "model")?) };
        let out = unsafe { out_ref(out, "out") }?;
        *out = distance(&dhat_model(&x.0, &model.0, &scheme(scheme_)?)?);
        Ok(())
    })
}

/// Exact truncated distance between two models.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_model_distance(
    a: *const ErgoModel,
    b: *const ErgoModel,
    scheme_: ErgoScheme,
    out: *mut ErgoDistance,
) -> ErgoStatus {
    guard(|| {
        let (a, b) = unsafe { (as_ref(a, "a")?, as_ref(b, "b")?) };
        let out = unsafe { out_ref(out, "out") }?;
        *out = distance(&model_distance(&a.0, &b.0, &scheme(scheme_)?)?);
        Ok(())
    })
}

/// Monte Carlo threshold for the goodness-of-fit test of length-`n` samples
/// against `model` at level `alpha`, from `n_cal` calibration draws.
///
/// # Safety
/// `model` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_calibrate(
    model: *const ErgoModel,
    alpha: f64,
    n: usize,
    n_cal: usize,
    seed: u64,
    scheme_: ErgoScheme,
    out: *mut *mut ErgoCalibration,
) -> ErgoStatus {
    guard(|| {
        let model = unsafe { as_ref(model, "model") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let cfg = GofConfig {
            alpha,
            n,
            n_cal,
            seed,
            scheme: scheme(scheme_)?,
        };
        *out = boxed(ErgoCalibration(calibrate_gamma(&model.0, &cfg)?));
        Ok(())
    })
}

/// The calibrated threshold γ̂; NaN for NULL.
///
/// # Safety
/// `cal` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ergo_calibration_gamma(cal: *const ErgoCalibration) -> f64 {
    // SAFETY: caller guarantees a live handle or NULL.
    unsafe { cal.as_ref() }.map_or(f64::NAN, |c| c.0.gamma_hat)
}

/// # Safety
/// `cal` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ergo_calibration_free(cal: *mut ErgoCalibration) {
    if !cal.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in this crate.
        drop(unsafe { Box::from_raw(cal) });
    }
}

/// Tests `x` against `model` with a threshold from [`ergo_calibrate`]; `x`
/// must have the calibrated length.
///
/// # Safety
/// `x`, `model`, `cal` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_gof_test(
    x: *const ErgoSample,
    model: *const ErgoModel,
    cal: *const ErgoCalibration,
    out: *mut ErgoGofResult,
) -> ErgoStatus {
    guard(|| {
        let (x, model, cal) = unsafe { (as_ref(x, "x")?, as_ref(model, "model")?, as_ref(cal, "cal")?) };
        let out = unsafe { out_ref(out, "out") }?;
        let r = gof_test(&x.0, &model.0, &cal.0)?;
        *out = ErgoGofResult {
            reject: r.rejected() as i32,
            statistic: distance(&r.statistic),
            gamma_hat: r.gamma_hat,
        };
        Ok(())
    })
}

/// Assigns `z` to the law of `x` (label 1) or `y` (label 2).
///
/// # Safety
/// `x`, `y`, `z` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_classify(
    x: *const ErgoSample,
    y: *const ErgoSample,
    z: *const ErgoSample,
    scheme_: ErgoScheme,
    out: *mut ErgoClassification,
) -> ErgoStatus {
    guard(|| {
        let (x, y, z) = unsafe { (as_ref(x, "x")?, as_ref(y, "y")?, as_ref(z, "z")?) };
        let out = unsafe { out_ref(out, "out") }?;
        let r = classify(&x.0, &y.0, &z.0, &scheme(scheme_)?)?;
        *out = ErgoClassification {
            label: r.label,
            d_xz: distance(&r.d_xz),
            d_yz: distance(&r.d_yz),
            certified: r.certified as i32,
        };
        Ok(())
    })
}

fn parse_boundary(expr: *const c_char) -> Result<Boundary, Failure> {
    if expr.is_null() {
        return Ok(Boundary::default());
    }
    let text = unsafe { c_str(expr, "boundary") }?;
    Ok(text.parse()?)
}

/// Change-point estimate over `[b(n), n - b(n)]`, where `boundary` is an
/// expression in `n` (NULL means `sqrt(n)`).
///
/// # Safety
/// `z` must be a live handle; `boundary` NULL or a NUL-terminated string;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_changepoint(
    z: *const ErgoSample,
    scheme_: ErgoScheme,
    boundary: *const c_char,
    out: *mut ErgoChangePoint,
) -> ErgoStatus {
    guard(|| {
        let z = unsafe { as_ref(z, "z") }?;
        let out = unsafe { out_ref(out, "out") }?;
        let est = estimate_changepoint_with(&z.0, &scheme(scheme_)?, &parse_boundary(boundary)?)?;
        let dhat_max = est.scan[est.k_hat - est.boundary].dhat;
        *out = ErgoChangePoint {
            k_hat: est.k_hat,
            boundary: est.boundary,
            n: est.n,
            dhat_max,
        };
        Ok(())
    })
}

/// Writes d̂(z[..t], z[t..]) for `t = lo..=hi` into `buf[0..=hi-lo]`.
///
/// # Safety
/// `z` must be a live handle; `buf` must be valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn ergo_scan(
    z: *const ErgoSample,
    scheme_: ErgoScheme,
    lo: usize,
    hi: usize,
    buf: *mut f64,
    cap: usize,
) -> ErgoStatus {
    guard(|| {
        let z = unsafe { as_ref(z, "z") }?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = hi.saturating_sub(lo) + 1;
        if cap < need {
            return Err(Failure(ErgoStatus::BufferTooSmall, format!("buffer holds {cap} values, scan needs {need}")));
        }
        let scan = scan_range(&z.0, &scheme(scheme_)?, lo, hi)?;
        // SAFETY: `buf` has room for `need` doubles.
        let dst = unsafe { std::slice::from_raw_parts_mut(buf, scan.len()) };
        for (d, p) in dst.iter_mut().zip(&scan) {
            *d = p.dhat;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(Failure::from(Error::Range("x".into())).0, ErgoStatus::Range);
        assert_eq!(Failure::from(Error::Capability("x".into())).0, ErgoStatus::Capability);
        assert_eq!(Failure::from(Error::Config("x".into())).0, ErgoStatus::InvalidArgument);
    }

    #[test]
    fn panics_are_contained() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, ErgoStatus::Panic);
        let msg = unsafe { CStr::from_ptr(ergo_last_error_message()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }
}
