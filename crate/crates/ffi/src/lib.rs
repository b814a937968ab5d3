//! C ABI over the photonforge toolkit.
//!
//! Objects cross the boundary as opaque handles (`PfStream`, `PfHistogram`)
//! owned by the caller and released with the matching `*_free`. Every call
//! returns a `PfStatus`; on failure `pf_last_error()` describes it until the
//! next failing call on the same thread. Strings returned through `char **`
//! are freed with `pf_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use photonforge::correlator::{correlate, CorrelationConfig, CorrelationHistogram};
use photonforge::emitsim::{simulate_scene, SceneConfig};
use photonforge::fitting::fit_g2;
use photonforge::pipeline::{builtin_scenario, run_scenario};
use photonforge::timetag::{read_stream, write_stream, TimeTagStream};
use photonforge::tomography::{mle_reconstruct, polarization_report, Projection, ProjectionCounts};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Simulation = 6,
    Correlation = 7,
    Fit = 8,
    Tomography = 9,
    Pipeline = 10,
    Panic = 99,
}

/// Time-tag stream handle.
pub struct PfStream(TimeTagStream);

/// Correlation histogram handle.
pub struct PfHistogram(CorrelationHistogram);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfG2Fit {
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau1_ps: f64,
    pub tau1_err_ps: f64,
    pub tau2_ps: f64,
    pub chi2_reduced: f64,
    pub converged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PfPolarization {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub degree_of_polarization: f64,
    /// Bloch vector of the dominant eigenstate; zeros when fully mixed.
    pub dominant_stokes: [f64; 3],
    pub iterations: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(PfStatus, String);

fn fail(status: PfStatus, e: impl std::fmt::Display) -> Failure {
    Failure(status, e.to_string())
}

/// Runs `f`, recording the message of any failure or panic.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PfStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return PfStatus::Ok,
        Ok(Err(Failure(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (PfStatus::Panic, m)
        }
    };
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
    status
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(PfStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(PfStatus::InvalidUtf8, e))
}

unsafe fn get<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(PfStatus::NullPointer, "null handle"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(PfStatus::NullPointer, "null output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(PfStatus::NullPointer, "null output pointer"));
    }
    *out = CString::new(s).map_err(|e| fail(PfStatus::Format, e))?.into_raw();
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty when there was none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn pf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a PTAG file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_stream_read(path: *const c_char, out: *mut *mut PfStream) -> PfStatus {
    guard(|| {
        let s = read_stream(text(path)?).map_err(|e| fail(PfStatus::Io, e))?;
        put(out, PfStream(s))
    })
}

/// # Safety
/// `stream` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pf_stream_write(stream: *const PfStream, path: *const c_char) -> PfStatus {
    guard(|| write_stream(&get(stream)?.0, text(path)?).map_err(|e| fail(PfStatus::Io, e)))
}

/// Builds a stream from `len` sorted timestamps (in ticks) and channels.
///
/// # Safety
/// `timestamps` and `channels` must each point to `len` elements.
#[no_mangle]
pub unsafe extern "C" fn pf_stream_from_arrays(
    resolution_ps: u64,
    channel_count: u16,
    timestamps: *const u64,
    channels: *const u16,
    len: usize,
    out: *mut *mut PfStream,
) -> PfStatus {
    guard(|| {
        let (ts, ch) = if len == 0 {
            (Vec::new(), Vec::new())
        } else {
            if timestamps.is_null() || channels.is_null() {
                return Err(fail(PfStatus::NullPointer, "null array"));
            }
            (
                std::slice::from_raw_parts(timestamps, len).to_vec(),
                std::slice::from_raw_parts(channels, len).to_vec(),
            )
        };
        let s = TimeTagStream::new(resolution_ps, channel_count, ts, ch)
            .map_err(|e| fail(PfStatus::InvalidArgument, e))?;
        put(out, PfStream(s))
    })
}

/// Simulates a scene given as JSON (the CLI's scene format).
///
/// # Safety
/// `scene_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_simulate(scene_json: *const c_char, out: *mut *mut PfStream) -> PfStatus {
    guard(|| {
        let cfg: SceneConfig = serde_json::from_str(text(scene_json)?).map_err(|e| fail(PfStatus::Format, e))?;
        let s = simulate_scene(&cfg).map_err(|e| fail(PfStatus::Simulation, e))?;
        put(out, PfStream(s))
    })
}

/// Number of records; 0 for a null handle.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_stream_len(stream: *const PfStream) -> usize {
    stream.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `stream` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_stream_free(stream: *mut PfStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Cross-correlates `channel_a` against `channel_b` with `bin_ps` bins over
/// `+-window_ns`.
///
/// # Safety
/// `stream` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_correlate(
    stream: *const PfStream,
    bin_ps: u64,
    window_ns: f64,
    channel_a: u16,
    channel_b: u16,
    out: *mut *mut PfHistogram,
) -> PfStatus {
    guard(|| {
        let s = &get(stream)?.0;
        let cfg = CorrelationConfig::from_physical(s.resolution_ps(), bin_ps, window_ns, channel_a, channel_b)
            .map_err(|e| fail(PfStatus::InvalidArgument, e))?;
        let h = correlate(s, &cfg).map_err(|e| fail(PfStatus::Correlation, e))?;
        put(out, PfHistogram(h))
    })
}

/// Number of bins; 0 for a null handle.
///
/// # Safety
/// `hist` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pf_histogram_len(hist: *const PfHistogram) -> usize {
    hist.as_ref().map_or(0, |h| h.0.len())
}

/// Copies bin centers (ps), g2 and its errors into caller arrays of `len`
/// elements; `len` must equal `pf_histogram_len`. Any array may be null.
///
/// # Safety
/// Non-null arrays must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn pf_histogram_copy(
    hist: *const PfHistogram,
    tau_ps: *mut f64,
    g2: *mut f64,
    g2_err: *mut f64,
    len: usize,
) -> PfStatus {
    guard(|| {
        let h = &get(hist)?.0;
        if len != h.len() {
            return Err(fail(
                PfStatus::InvalidArgument,
                format!("buffer length {len} but histogram has {} bins", h.len()),
            ));
        }
        for (dst, src) in [(tau_ps, h.tau_ps()), (g2, h.g2.clone()), (g2_err, h.g2_err.clone())] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `hist` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_histogram_free(hist: *mut PfHistogram) {
    if !hist.is_null() {
        drop(Box::from_raw(hist));
    }
}

/// # Safety
/// `hist` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_g2(hist: *const PfHistogram, out: *mut PfG2Fit) -> PfStatus {
    guard(|| {
        let f = fit_g2(&get(hist)?.0).map_err(|e| fail(PfStatus::Fit, e))?;
        let out = out.as_mut().ok_or_else(|| fail(PfStatus::NullPointer, "null output pointer"))?;
        *out = PfG2Fit {
            g2_zero: f.g2_zero,
            g2_zero_err: f.g2_zero_err,
            beta1: f.beta1(),
            beta2: f.beta2(),
            tau1_ps: f.tau1_ps(),
            tau1_err_ps: f.tau1_err_ps(),
            tau2_ps: f.tau2_ps(),
            chi2_reduced: f.fit.chi2_reduced,
            converged: f.fit.converged,
        };
        Ok(())
    })
}

/// MLE polarization state from counts and integration times in the order
/// H, V, D, A, R, L.
///
/// # Safety
/// `counts` and `seconds` must each point to 6 elements.
#[no_mangle]
pub unsafe extern "C" fn pf_tomography(
    counts: *const f64,
    seconds: *const f64,
    out: *mut PfPolarization,
) -> PfStatus {
    guard(|| {
        if counts.is_null() || seconds.is_null() {
            return Err(fail(PfStatus::NullPointer, "null array"));
        }
        let (c, t) = (std::slice::from_raw_parts(counts, 6), std::slice::from_raw_parts(seconds, 6));
        let p = |k: usize| Projection { counts: c[k], seconds: t[k] };
        let pc = ProjectionCounts { h: p(0), v: p(1), d: p(2), a: p(3), r: p(4), l: p(5) };
        let mle = mle_reconstruct(&pc).map_err(|e| fail(PfStatus::Tomography, e))?;
        let rep = polarization_report(&mle.rho);
        let out = out.as_mut().ok_or_else(|| fail(PfStatus::NullPointer, "null output pointer"))?;
        *out = PfPolarization {
            lambda_plus: rep.eigenvalues.0,
            lambda_minus: rep.eigenvalues.1,
            degree_of_polarization: rep.degree_of_polarization,
            dominant_stokes: rep.dominant_stokes.unwrap_or([0.0; 3]),
            iterations: mle.iterations as u32,
        };
        Ok(())
    })
}

/// Runs a built-in scenario and returns its outcome and comparison as a
/// JSON string. A negative `seed` keeps the scenario's own seed.
///
/// # Safety
/// `id` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pf_reproduce(id: *const c_char, seed: i64, out_json: *mut *mut c_char) -> PfStatus {
    guard(|| {
        let s = builtin_scenario(text(id)?).map_err(|e| fail(PfStatus::InvalidArgument, e))?;
        let seed = u64::try_from(seed).ok();
        let (outcome, comparison) = run_scenario(&s, seed).map_err(|e| fail(PfStatus::Pipeline, e))?;
        let json = serde_json::json!({
            "outcome": outcome,
            "comparison": comparison,
            "all_pass": comparison.all_pass(),
        });
        put_string(out_json, json.to_string())
    })
}
