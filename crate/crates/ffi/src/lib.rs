//! C ABI for `sedm`: load a checkpoint, enhance a buffer of samples, score
//! an estimate against a reference.
//!
//! Every fallible call returns a [`SedmStatus`]. On failure the message is
//! kept per thread and read with [`sedm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sedm::dsp::{Waveform, SAMPLE_RATE};
use sedm::experiment::enhance_waveform;
use sedm::model::{checkpoint, Sedm};
use sedm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SedmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque trained model.
pub struct SedmModel {
    inner: Sedm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SedmStatus {
    match err {
        Error::Io { .. } | Error::Audio { .. } | Error::MissingInput(_) => SedmStatus::Io,
        Error::Checkpoint(_) | Error::Crc { .. } => SedmStatus::BadCheckpoint,
        Error::NonFinite(_) | Error::Degenerate(_) | Error::Domain(_) => SedmStatus::Numeric,
        _ => SedmStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SedmStatus, String)>) -> SedmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SedmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SedmStatus::Panic
        }
    }
}

fn lift(err: Error) -> (SedmStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (SedmStatus, String) {
    (SedmStatus::NullPointer, format!("`{what}` is null"))
}

/// # Safety
/// `samples` must be valid for `len` reads when non-null.
unsafe fn waveform(samples: *const f64, len: usize, what: &str) -> Result<Waveform, (SedmStatus, String)> {
    if samples.is_null() {
        return Err(null(what));
    }
    let data = std::slice::from_raw_parts(samples, len).to_vec();
    Ok(Waveform::new(data, SAMPLE_RATE))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sedm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn sedm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn sedm_sample_rate() -> u32 {
    SAMPLE_RATE
}

/// Loads a checkpoint file. On success `*out` owns a model that must be
/// released with [`sedm_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedm_model_load(path: *const c_char, out: *mut *mut SedmModel) -> SedmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (SedmStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = checkpoint::load(Path::new(path)).map_err(lift)?;
        *out = Box::into_raw(Box::new(SedmModel { inner }));
        Ok(())
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `bytes` must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedm_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut SedmModel) -> SedmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let inner = checkpoint::from_bytes(std::slice::from_raw_parts(bytes, len)).map_err(lift)?;
        *out = Box::into_raw(Box::new(SedmModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a load call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sedm_model_free(model: *mut SedmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of reverse steps the model runs.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn sedm_model_steps(model: *const SedmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().steps)
}

/// Enhances `len` samples at 16 kHz into `out`, which must hold `out_len >= len`
/// samples. The output has the input's length.
///
/// # Safety
/// `input` must be valid for `len` reads and `out` for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn sedm_enhance(
    model: *const SedmModel,
    input: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> SedmStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let noisy = waveform(input, len, "input")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < len {
            return Err((SedmStatus::BufferTooSmall, format!("output holds {out_len} samples, need {len}")));
        }
        let clean = enhance_waveform(&model.inner, &noisy).map_err(lift)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&clean.samples);
        Ok(())
    })
}

/// Scale-invariant SDR in dB of `estimate` against `reference`.
///
/// # Safety
/// Both buffers must be valid for `len` reads; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sedm_si_sdr(
    reference: *const f64,
    estimate: *const f64,
    len: usize,
    out: *mut f64,
) -> SedmStatus {
    guard(|| {
        let r = waveform(reference, len, "reference")?;
        let e = waveform(estimate, len, "estimate")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sedm::metrics::si_sdr(&r, &e).map_err(lift)?;
        Ok(())
    })
}
