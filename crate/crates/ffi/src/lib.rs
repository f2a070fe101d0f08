//! C ABI over the `fedua` library.
//!
//! Every function returns a [`FeduaStatus`]; results go through out
//! pointers. Models and codebooks are opaque handles that must be released
//! with the matching `_free` function. After a non-OK status,
//! [`fedua_last_error_message`] describes the failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use fedua::codebook::{choose_embedding_length, min_distance_bound, Codebook};
use fedua::fedua::{authenticate, scores, warm_up_threshold, Verdict};
use fedua::nn::{load_checkpoint, Model, Tensor};
use fedua::{Error, UserId};

/// Status codes returned by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeduaStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Dimension = 3,
    Calibration = 4,
    Format = 5,
    Io = 6,
    Runtime = 7,
    Panic = 8,
}

/// A trained network loaded from a checkpoint.
pub struct FeduaModel {
    inner: Model,
}

/// A set of per-user binary codewords.
pub struct FeduaCodebook {
    inner: Codebook,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FeduaStatus {
    match e {
        Error::InvalidArgument(_) | Error::InvalidLayer { .. } | Error::Config(_) => FeduaStatus::InvalidArgument,
        Error::Dimension(_) => FeduaStatus::Dimension,
        Error::Calibration(_) => FeduaStatus::Calibration,
        Error::Parse { .. } | Error::Format { .. } => FeduaStatus::Format,
        Error::Io(_) => FeduaStatus::Io,
        Error::State(_) | Error::NonFinite(_) => FeduaStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F>(f: F) -> FeduaStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FeduaStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FeduaStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FeduaStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn doubles<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns the full message
/// length in bytes excluding the terminator. `buf` may be null to query the
/// length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fedua_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedua_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Lower bound on the probability that `n` random `n_e`-bit codewords are
/// pairwise at Hamming distance at least `tau`.
///
/// # Safety
/// `out_probability` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fedua_min_distance_bound(
    n: usize,
    n_e: usize,
    tau: usize,
    out_probability: *mut f64,
) -> FeduaStatus {
    guard(|| {
        let o = out(out_probability, "out_probability")?;
        *o = min_distance_bound(n, n_e, tau)?.probability;
        Ok(())
    })
}

/// Smallest codeword length whose bound reaches `q`.
///
/// # Safety
/// `out_n_e` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fedua_choose_embedding_length(
    n: usize,
    tau: usize,
    q: f64,
    out_n_e: *mut usize,
) -> FeduaStatus {
    guard(|| {
        let o = out(out_n_e, "out_n_e")?;
        *o = choose_embedding_length(n, tau, q)?;
        Ok(())
    })
}

/// Draws one `n_e`-bit codeword for each of the `count` user ids.
///
/// # Safety
/// `user_ids` must point to `count` readable ids; `out_codebook` must be a
/// valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_generate(
    n_e: usize,
    seed: u64,
    user_ids: *const u32,
    count: usize,
    out_codebook: *mut *mut FeduaCodebook,
) -> FeduaStatus {
    guard(|| {
        let o = out(out_codebook, "out_codebook")?;
        if user_ids.is_null() && count > 0 {
            return Err(Failure::Null("user_ids"));
        }
        let ids: &[u32] = if count == 0 {
            &[]
        } else {
            slice::from_raw_parts(user_ids, count)
        };
        let inner = Codebook::generate(n_e, seed, ids.iter().map(|&u| UserId(u)))?;
        *o = Box::into_raw(Box::new(FeduaCodebook { inner }));
        Ok(())
    })
}

/// Reads a codebook JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_codebook` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_load(
    path: *const c_char,
    out_codebook: *mut *mut FeduaCodebook,
) -> FeduaStatus {
    guard(|| {
        let o = out(out_codebook, "out_codebook")?;
        let inner = Codebook::load(&path_arg(path)?)?;
        *o = Box::into_raw(Box::new(FeduaCodebook { inner }));
        Ok(())
    })
}

/// Writes a codebook JSON file.
///
/// # Safety
/// `codebook` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_save(codebook: *const FeduaCodebook, path: *const c_char) -> FeduaStatus {
    guard(|| {
        let cb = deref(codebook, "codebook")?;
        cb.inner.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Codeword length and number of users.
///
/// # Safety
/// `codebook` must come from this library; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_shape(
    codebook: *const FeduaCodebook,
    out_n_e: *mut usize,
    out_users: *mut usize,
) -> FeduaStatus {
    guard(|| {
        let cb = deref(codebook, "codebook")?;
        *out(out_n_e, "out_n_e")? = cb.inner.n_e();
        *out(out_users, "out_users")? = cb.inner.len();
        Ok(())
    })
}

/// Minimum pairwise Hamming distance over the codebook.
///
/// # Safety
/// `codebook` must come from this library; `out_distance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_min_distance(
    codebook: *const FeduaCodebook,
    out_distance: *mut usize,
) -> FeduaStatus {
    guard(|| {
        let cb = deref(codebook, "codebook")?;
        let o = out(out_distance, "out_distance")?;
        *o = cb.inner.min_pairwise_distance()?;
        Ok(())
    })
}

/// Copies the codeword of `user_id` (one byte per bit, 0 or 1) into `bits`,
/// which must hold exactly `n_e` bytes.
///
/// # Safety
/// `codebook` must come from this library; `bits` must point to `len`
/// writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_embedding(
    codebook: *const FeduaCodebook,
    user_id: u32,
    bits: *mut u8,
    len: usize,
) -> FeduaStatus {
    guard(|| {
        let cb = deref(codebook, "codebook")?;
        if bits.is_null() {
            return Err(Failure::Null("bits"));
        }
        let y = cb.inner.embedding(UserId(user_id))?;
        if len != y.len() {
            return Err(Error::Dimension(format!("buffer holds {len} bits, codewords have {}", y.len())).into());
        }
        slice::from_raw_parts_mut(bits, len).copy_from_slice(y.bits());
        Ok(())
    })
}

/// Releases a codebook. Null is ignored.
///
/// # Safety
/// `codebook` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fedua_codebook_free(codebook: *mut FeduaCodebook) {
    if !codebook.is_null() {
        drop(Box::from_raw(codebook));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_model_load(path: *const c_char, out_model: *mut *mut FeduaModel) -> FeduaStatus {
    guard(|| {
        let o = out(out_model, "out_model")?;
        let (config, params) = load_checkpoint(&path_arg(path)?)?;
        let inner = Model::new(config, params)?;
        *o = Box::into_raw(Box::new(FeduaModel { inner }));
        Ok(())
    })
}

/// Input length `L` and embedding length `n_e` of a model.
///
/// # Safety
/// `model` must come from this library; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_model_shape(
    model: *const FeduaModel,
    out_input_length: *mut usize,
    out_embedding_length: *mut usize,
) -> FeduaStatus {
    guard(|| {
        let m = deref(model, "model")?;
        *out(out_input_length, "out_input_length")? = m.inner.config().input_length;
        *out(out_embedding_length, "out_embedding_length")? = m.inner.config().embedding_length;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn fedua_model_free(model: *mut FeduaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn single_sample(model: &FeduaModel, sample: *const f64, len: usize) -> Result<Tensor, Failure> {
    let x = doubles(sample, len, "sample")?;
    let l = model.inner.config().input_length;
    if len != l {
        return Err(Error::Dimension(format!("sample has {len} values, the model expects {l}")).into());
    }
    Ok(Tensor::new(vec![1, 1, l], x.to_vec())?)
}

/// Squared distance between the model output for one sample and the
/// codeword of `user_id`.
///
/// # Safety
/// Handles must come from this library; `sample` must point to `len`
/// doubles; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_score(
    model: *const FeduaModel,
    codebook: *const FeduaCodebook,
    user_id: u32,
    sample: *const f64,
    len: usize,
    out_score: *mut f64,
) -> FeduaStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let cb = deref(codebook, "codebook")?;
        let o = out(out_score, "out_score")?;
        let x = single_sample(m, sample, len)?;
        *o = scores(&m.inner, cb.inner.embedding(UserId(user_id))?, &x)?[0];
        Ok(())
    })
}

/// Accept (`*out_accept = 1`) iff the score is at most `tau`; the score is
/// written to `out_score` when that pointer is not null.
///
/// # Safety
/// Handles must come from this library; `sample` must point to `len`
/// doubles; `out_accept` must be writable; `out_score` may be null.
#[no_mangle]
pub unsafe extern "C" fn fedua_authenticate(
    model: *const FeduaModel,
    codebook: *const FeduaCodebook,
    user_id: u32,
    tau: f64,
    sample: *const f64,
    len: usize,
    out_accept: *mut i32,
    out_score: *mut f64,
) -> FeduaStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let cb = deref(codebook, "codebook")?;
        let accept = out(out_accept, "out_accept")?;
        let x = single_sample(m, sample, len)?;
        let d = authenticate(&m.inner, cb.inner.embedding(UserId(user_id))?, tau, &x)?;
        *accept = (d.verdict == Verdict::Accept) as i32;
        if let Some(s) = out_score.as_mut() {
            *s = d.score;
        }
        Ok(())
    })
}

/// Warm-up calibration over `k` samples stored row-major (`k * len`
/// doubles): `tau` becomes the `floor(k * r)`-th smallest score.
///
/// # Safety
/// Handles must come from this library; `samples` must point to `k * len`
/// doubles; `out_tau` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedua_warm_up_threshold(
    model: *const FeduaModel,
    codebook: *const FeduaCodebook,
    user_id: u32,
    samples: *const f64,
    k: usize,
    len: usize,
    r: f64,
    out_tau: *mut f64,
) -> FeduaStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let cb = deref(codebook, "codebook")?;
        let o = out(out_tau, "out_tau")?;
        let l = m.inner.config().input_length;
        if len != l {
            return Err(Error::Dimension(format!("samples have {len} values, the model expects {l}")).into());
        }
        let total = k
            .checked_mul(len)
            .ok_or_else(|| Error::InvalidArgument("k * len overflows".into()))?;
        let data = doubles(samples, total, "samples")?;
        let x = Tensor::new(vec![k, 1, l], data.to_vec())?;
        *o = warm_up_threshold(&m.inner, cb.inner.embedding(UserId(user_id))?, &x, r)?.tau;
        Ok(())
    })
}
