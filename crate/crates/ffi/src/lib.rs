//! C interface to trained tribeflow models.
//!
//! Every fallible function returns a [`TfStatus`]. On failure a description
//! is available from [`tf_last_error_message`] on the same thread. Models are
//! opaque [`TfModel`] handles obtained from [`tf_model_load`] and released
//! with [`tf_model_free`]; a loaded model is immutable and may be queried
//! from several threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use tribeflow::model_io;
use tribeflow::predict::{self, Query};
use tribeflow::{Error, Model};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    UnknownItem = 5,
    BufferTooSmall = 6,
    Numeric = 7,
    Panic = 8,
}

/// A loaded model.
pub struct TfModel {
    model: Model,
}

/// A prediction request. Arrays may be null when their length is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TfQuery {
    /// User id, or -1 for a user the model has not seen.
    pub user: i64,
    /// Recent item ids, oldest first; the last is the current item.
    pub history: *const u32,
    pub history_len: usize,
    /// Gaps in seconds between consecutive history items, optionally
    /// followed by the time since the current item.
    pub taus: *const f64,
    pub taus_len: usize,
    /// Items to score; 0 length means every item.
    pub candidates: *const u32,
    pub candidates_len: usize,
}

struct Failure(TfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => TfStatus::Io,
            Error::Format(_) | Error::Parse { .. } => TfStatus::Format,
            Error::UnknownItem(_) => TfStatus::UnknownItem,
            Error::Numeric(_) => TfStatus::Numeric,
            _ => TfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let what = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(TfStatus::Panic, format!("internal panic: {what}")))
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            TfStatus::Ok
        }
        Err(Failure(status, message)) => {
            set_last_error(&message);
            status
        }
    }
}

fn null() -> Failure {
    Failure(TfStatus::NullPointer, "null pointer argument".into())
}

unsafe fn model_ref<'a>(model: *const TfModel) -> Result<&'a Model, Failure> {
    model.as_ref().map(|m| &m.model).ok_or_else(null)
}

unsafe fn c_str<'a>(s: *const c_char) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(TfStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn array<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null()),
        (false, n) => Ok(slice::from_raw_parts(p, n)),
    }
}

unsafe fn out_array<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Failure> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&mut []),
        (true, _) => Err(null()),
        (false, n) => Ok(slice::from_raw_parts_mut(p, n)),
    }
}

unsafe fn to_query(model: &Model, q: *const TfQuery) -> Result<Query, Failure> {
    let q = q.as_ref().ok_or_else(null)?;
    let user = match q.user {
        -1 => None,
        u if u >= 0 && (u as u64) < model.n_users as u64 => Some(u as u32),
        u => return Err(Failure(TfStatus::InvalidArgument, format!("user id {u} out of range"))),
    };
    let candidates = array(q.candidates, q.candidates_len)?;
    Ok(Query {
        user,
        history: array(q.history, q.history_len)?.to_vec(),
        taus: array(q.taus, q.taus_len)?.to_vec(),
        candidates: (!candidates.is_empty()).then(|| candidates.to_vec()),
    })
}

/// Writes `values` to `out` if it fits; `out_len` always receives the
/// number of values available.
unsafe fn fill<T: Copy>(values: &[T], out: *mut T, capacity: usize, out_len: *mut usize) -> Result<(), Failure> {
    let n = out_len.as_mut().ok_or_else(null)?;
    *n = values.len();
    if capacity < values.len() {
        return Err(Failure(
            TfStatus::BufferTooSmall,
            format!("need room for {} values, got {capacity}", values.len()),
        ));
    }
    out_array(out, values.len())?.copy_from_slice(values);
    Ok(())
}

/// Loads a model file. On success `*out` owns a handle for [`tf_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_model_load(path: *const c_char, out: *mut *mut TfModel) -> TfStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        *out = ptr::null_mut();
        let model = model_io::load(Path::new(c_str(path)?))?;
        *out = Box::into_raw(Box::new(TfModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`tf_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of latent environments, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_num_envs(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.k)
}

/// Number of items, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_num_items(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_items)
}

/// Number of users, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_num_users(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.n_users)
}

/// Looks up an item id by name.
///
/// # Safety
/// `model` must be a live handle, `name` NUL-terminated, `out_id` valid.
#[no_mangle]
pub unsafe extern "C" fn tf_model_item_id(model: *const TfModel, name: *const c_char, out_id: *mut u32) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let name = c_str(name)?;
        let out = out_id.as_mut().ok_or_else(null)?;
        *out = m.items.get(name).ok_or_else(|| Failure::from(Error::UnknownItem(name.to_string())))?;
        Ok(())
    })
}

/// Looks up a user id by name; unknown users give `TF_STATUS_INVALID_ARGUMENT`.
///
/// # Safety
/// `model` must be a live handle, `name` NUL-terminated, `out_id` valid.
#[no_mangle]
pub unsafe extern "C" fn tf_model_user_id(model: *const TfModel, name: *const c_char, out_id: *mut u32) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let name = c_str(name)?;
        let out = out_id.as_mut().ok_or_else(null)?;
        *out = m
            .users
            .get(name)
            .ok_or_else(|| Failure(TfStatus::InvalidArgument, format!("unknown user `{name}`")))?;
        Ok(())
    })
}

/// Copies an item's name, NUL-terminated, into `buf`. `out_len` receives the
/// name length in bytes excluding the terminator.
///
/// # Safety
/// `model` must be a live handle, `buf` writable for `capacity` bytes,
/// `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn tf_model_item_name(
    model: *const TfModel,
    id: u32,
    buf: *mut c_char,
    capacity: usize,
    out_len: *mut usize,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let name = m
            .items
            .name(id)
            .ok_or_else(|| Failure::from(Error::UnknownItem(format!("item id {id}"))))?;
        let mut bytes = name.as_bytes().to_vec();
        bytes.push(0);
        fill(&bytes, buf.cast::<u8>(), capacity, out_len)?;
        *out_len -= 1;
        Ok(())
    })
}

/// Ranks candidates by descending score and writes the best `capacity` of
/// them. `out_len` receives the number written.
///
/// # Safety
/// `model` must be a live handle, `query` valid with arrays of the stated
/// lengths, both output arrays writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn tf_rank(
    model: *const TfModel,
    query: *const TfQuery,
    out_items: *mut u32,
    out_scores: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ranked = predict::rank_candidates(m, &to_query(m, query)?)?;
        let n = ranked.len().min(capacity);
        let items = out_array(out_items, n)?;
        let scores = out_array(out_scores, n)?;
        for (j, (item, score)) in ranked.into_iter().take(n).enumerate() {
            items[j] = item;
            scores[j] = score;
        }
        *out_len.as_mut().ok_or_else(null)? = n;
        Ok(())
    })
}

/// Next-item probabilities, one per candidate in candidate order, or one per
/// item id when the query has no candidates.
///
/// # Safety
/// `model` must be a live handle, `query` valid, `out` writable for
/// `capacity` values, `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn tf_next_item_likelihood(
    model: *const TfModel,
    query: *const TfQuery,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let probs: Vec<f64> = predict::next_item_likelihood(m, &to_query(m, query)?)?.into_iter().map(|p| p.1).collect();
        fill(&probs, out, capacity, out_len)
    })
}

/// Non-personalized probability of moving from `src` to `dst`.
///
/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tf_pairwise_likelihood(model: *const TfModel, src: u32, dst: u32, out: *mut f64) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or_else(null)?;
        if let Some(&bad) = [src, dst].iter().find(|&&i| i as usize >= m.n_items) {
            return Err(Error::UnknownItem(format!("item id {bad}")).into());
        }
        *out = predict::pairwise_likelihood(m, src, dst);
        Ok(())
    })
}

/// Posterior over environments for a query.
///
/// # Safety
/// `model` must be a live handle, `query` valid, `out` writable for
/// `capacity` values, `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn tf_env_posterior(
    model: *const TfModel,
    query: *const TfQuery,
    out: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let post = predict::env_posterior(m, &to_query(m, query)?)?;
        fill(&post, out, capacity, out_len)
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn tf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn tf_status_string(status: TfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        TfStatus::Ok => c"ok",
        TfStatus::NullPointer => c"null pointer",
        TfStatus::InvalidArgument => c"invalid argument",
        TfStatus::Io => c"i/o error",
        TfStatus::Format => c"malformed input",
        TfStatus::UnknownItem => c"unknown item",
        TfStatus::BufferTooSmall => c"buffer too small",
        TfStatus::Numeric => c"numerical failure",
        TfStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}
