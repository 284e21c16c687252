//! C ABI for sepkit.
//!
//! Every entry point returns a [`SepkitStatus`]. On failure a description is
//! kept in thread-local storage and can be read with
//! [`sepkit_last_error_message`]. Models are opaque handles created by
//! [`sepkit_model_load`] and released with [`sepkit_model_free`].
//!
//! Audio crosses the boundary as `double` samples in [-1, 1]. Multi-source
//! buffers are source-major: source `k` occupies `[k * len, (k + 1) * len)`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sepkit::dsp::{AudioBuffer, StftConfig};
use sepkit::metrics::{self, AssignMode};
use sepkit::neural::{Checkpoint, Stage};
use sepkit::pipeline::{separate, separate_dc_baseline};
use sepkit::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InputTooShort = 3,
    ShapeMismatch = 4,
    InvalidConfig = 5,
    DegenerateReference = 6,
    UnsupportedSourceCount = 7,
    IncompatibleCheckpoint = 8,
    UnsupportedStage = 9,
    Io = 10,
    NumericError = 11,
    BufferTooSmall = 12,
    Panic = 13,
    Other = 14,
}

/// Training stage a loaded model came from.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepkitStage {
    /// Embedding network only; separation goes through K-means.
    Dc = 0,
    Joint = 1,
    Dl = 2,
    /// Mask network without embeddings.
    Upit = 3,
}

/// How estimates are paired with references when scoring.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SepkitAssign {
    /// Output k is scored against reference k.
    Default = 0,
    /// The pairing with the highest total SDR.
    Optimal = 1,
}

/// Opaque model handle.
pub struct SepkitModel {
    ckpt: Checkpoint,
    stft: StftConfig,
    kmeans_seed: u64,
    kmeans_iter: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SepkitStatus {
    match err {
        Error::InputTooShort { .. } => SepkitStatus::InputTooShort,
        Error::ShapeMismatch(_) | Error::SampleRate { .. } => SepkitStatus::ShapeMismatch,
        Error::InvalidConfig(_) | Error::ConfigParse(_) => SepkitStatus::InvalidConfig,
        Error::DegenerateReference(_) | Error::DegenerateSource(_) => SepkitStatus::DegenerateReference,
        Error::UnsupportedSourceCount(_) => SepkitStatus::UnsupportedSourceCount,
        Error::IncompatibleCheckpoint(_) => SepkitStatus::IncompatibleCheckpoint,
        Error::UnsupportedStage(_) | Error::StageOrderViolation(_) => SepkitStatus::UnsupportedStage,
        Error::Io { .. } | Error::Wav { .. } | Error::ManifestError(_) => SepkitStatus::Io,
        Error::NumericGuardTripped(_) => SepkitStatus::NumericError,
        _ => SepkitStatus::Other,
    }
}

struct Fail(SepkitStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail(status: SepkitStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SepkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SepkitStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            SepkitStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if ptr.is_null() {
        return Err(fail(SepkitStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn buffers(data: &[f64], num_sources: usize, len: usize, sample_rate: u32) -> Result<Vec<AudioBuffer>, Fail> {
    data.chunks(len)
        .take(num_sources)
        .map(|c| AudioBuffer::new(c.to_vec(), sample_rate).map_err(Fail::from))
        .collect()
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sepkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `capacity`). Returns the full message length excluding the
/// terminator, or 0 if the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sepkit_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && capacity > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint file. On success `*out` receives a handle that must be
/// released with [`sepkit_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepkit_model_load(path: *const c_char, out: *mut *mut SepkitModel) -> SepkitStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(SepkitStatus::NullPointer, "path or out is null"));
        }
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(SepkitStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let ckpt = Checkpoint::load(path)?;
        *out = Box::into_raw(Box::new(SepkitModel {
            ckpt,
            stft: StftConfig::default(),
            kmeans_seed: 0,
            kmeans_iter: 100,
        }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`sepkit_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sepkit_model_free(model: *mut SepkitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of sources the model separates.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepkit_model_num_sources(model: *const SepkitModel, out: *mut usize) -> SepkitStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(fail(SepkitStatus::NullPointer, "model or out is null"));
        }
        *out = (*model).ckpt.model.arch.sources;
        Ok(())
    })
}

/// Training stage of the loaded checkpoint.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sepkit_model_stage(model: *const SepkitModel, out: *mut SepkitStage) -> SepkitStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(fail(SepkitStatus::NullPointer, "model or out is null"));
        }
        *out = match (*model).ckpt.stage {
            Stage::Dc => SepkitStage::Dc,
            Stage::Joint => SepkitStage::Joint,
            Stage::Dl => SepkitStage::Dl,
            Stage::Upit => SepkitStage::Upit,
        };
        Ok(())
    })
}

/// Sets the seed and iteration cap of the K-means step used for
/// embedding-only models.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sepkit_model_set_kmeans(model: *mut SepkitModel, seed: u64, max_iter: usize) -> SepkitStatus {
    guard(|| {
        if model.is_null() {
            return Err(fail(SepkitStatus::NullPointer, "model is null"));
        }
        if max_iter == 0 {
            return Err(fail(SepkitStatus::InvalidArgument, "max_iter must be positive"));
        }
        (*model).kmeans_seed = seed;
        (*model).kmeans_iter = max_iter;
        Ok(())
    })
}

/// Separates a mono mixture of `len` samples. `out` must hold
/// `num_sources * len` values and receives the estimates source-major.
///
/// # Safety
/// `model` must be a live handle, `mixture` must point to `len` readable
/// values and `out` to `out_capacity` writable values.
#[no_mangle]
pub unsafe extern "C" fn sepkit_separate(
    model: *const SepkitModel,
    mixture: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut f64,
    out_capacity: usize,
) -> SepkitStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(fail(SepkitStatus::NullPointer, "model or out is null"));
        }
        let m = &*model;
        let mix = AudioBuffer::new(slice(mixture, len, "mixture")?.to_vec(), sample_rate)?;
        let sources = m.ckpt.model.arch.sources;
        if out_capacity < sources * len {
            return Err(fail(
                SepkitStatus::BufferTooSmall,
                format!("output holds {out_capacity} values, need {}", sources * len),
            ));
        }
        let est = if m.ckpt.stage == Stage::Dc {
            separate_dc_baseline(&m.ckpt, &mix, &m.stft, m.kmeans_seed, m.kmeans_iter)?
        } else {
            separate(&m.ckpt, &mix, &m.stft)?
        };
        let out = std::slice::from_raw_parts_mut(out, sources * len);
        for (k, e) in est.iter().enumerate() {
            if e.samples.len() != len {
                return Err(fail(SepkitStatus::ShapeMismatch, "estimate length differs from input"));
            }
            out[k * len..(k + 1) * len].copy_from_slice(&e.samples);
        }
        Ok(())
    })
}

/// Scores `num_sources` estimates against references of `len` samples each.
/// The three output arrays receive SDR, SIR and SAR in dB, indexed by
/// reference; `assignment` (may be null) receives, for each estimate, the
/// index of the reference it was paired with. Unbounded ratios come back as
/// +/-infinity. `mode` is a [`SepkitAssign`] value, taken as an integer so
/// that out-of-range input is rejected instead of undefined.
///
/// # Safety
/// `estimates` and `references` must point to `num_sources * len` readable
/// values; each output array must hold `num_sources` values.
#[no_mangle]
pub unsafe extern "C" fn sepkit_score(
    estimates: *const f64,
    references: *const f64,
    num_sources: usize,
    len: usize,
    sample_rate: u32,
    mode: u32,
    sdr_db: *mut f64,
    sir_db: *mut f64,
    sar_db: *mut f64,
    assignment: *mut usize,
) -> SepkitStatus {
    guard(|| {
        if sdr_db.is_null() || sir_db.is_null() || sar_db.is_null() {
            return Err(fail(SepkitStatus::NullPointer, "output array is null"));
        }
        if num_sources == 0 || len == 0 {
            return Err(fail(SepkitStatus::InvalidArgument, "num_sources and len must be positive"));
        }
        let n = num_sources * len;
        let est = buffers(slice(estimates, n, "estimates")?, num_sources, len, sample_rate)?;
        let refs = buffers(slice(references, n, "references")?, num_sources, len, sample_rate)?;
        let mode = match mode {
            m if m == SepkitAssign::Default as u32 => AssignMode::Default,
            m if m == SepkitAssign::Optimal as u32 => AssignMode::Optimal,
            m => return Err(fail(SepkitStatus::InvalidArgument, format!("unknown assignment mode {m}"))),
        };
        let s = metrics::score(&est, &refs, mode)?;
        for k in 0..num_sources {
            *sdr_db.add(k) = s.sdr_db[k];
            *sir_db.add(k) = s.sir_db[k];
            *sar_db.add(k) = s.sar_db[k];
            if !assignment.is_null() {
                *assignment.add(k) = s.assignment[k];
            }
        }
        Ok(())
    })
}
