//! C ABI over the `teachroute` core.
//!
//! Pools and routers cross the boundary as opaque handles. Every fallible
//! function returns an `int32_t` status: `TR_OK` on success, a positive core
//! error code, or one of the negative codes defined here. The message for the
//! last failure on the calling thread is available from
//! [`tr_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use teachroute::registry::{self, Normalization, TeacherPool};
use teachroute::reward::{self, TokenLogProb, TokenLogProbs};
use teachroute::router::{self, RouterModel};
use teachroute::Error;

pub const TR_OK: i32 = 0;
/// A required pointer argument was null.
pub const TR_ERR_NULL_ARGUMENT: i32 = -1;
/// A string argument was not valid UTF-8.
pub const TR_ERR_INVALID_UTF8: i32 = -2;
/// An output buffer had the wrong length.
pub const TR_ERR_BUFFER_LENGTH: i32 = -3;
/// An unknown enum value was passed.
pub const TR_ERR_INVALID_ARGUMENT: i32 = -4;
/// A Rust panic was caught at the boundary.
pub const TR_ERR_PANIC: i32 = -5;

pub const TR_NORMALIZATION_ZSCORE: u32 = 0;
pub const TR_NORMALIZATION_MINMAX: u32 = 1;

/// Opaque teacher pool.
pub struct TrPool {
    pool: TeacherPool,
    fingerprint: CString,
    ids: Vec<CString>,
}

/// Opaque router checkpoint.
pub struct TrRouter {
    model: RouterModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|cell| *cell.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(e.code(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            TR_OK
        }
        Ok(Err(Fail(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("panic in teachroute");
            TR_ERR_PANIC
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(TR_ERR_NULL_ARGUMENT, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TR_ERR_INVALID_UTF8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the same
/// thread.
#[no_mangle]
pub extern "C" fn tr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|cell| cell.borrow().as_ptr())
}

/// Loads a teacher pool from a JSON file. On success `*out` receives a handle
/// that must be released with [`tr_pool_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tr_pool_load(path: *const c_char, out: *mut *mut TrPool) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let pool = registry::load_pool(Path::new(path))?;
        let fingerprint = CString::new(pool.fingerprint()).unwrap_or_default();
        let ids = pool
            .teachers()
            .iter()
            .map(|t| CString::new(t.id.as_str()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(TrPool {
            pool,
            fingerprint,
            ids,
        }));
        Ok(())
    })
}

/// # Safety
/// `pool` must come from [`tr_pool_load`] and not have been freed. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tr_pool_free(pool: *mut TrPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Number of teachers, or 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_pool_len(pool: *const TrPool) -> usize {
    pool.as_ref().map_or(0, |p| p.pool.len())
}

/// Hex fingerprint of the pool's ordered teacher ids. Owned by the handle.
///
/// # Safety
/// `pool` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_pool_fingerprint(pool: *const TrPool) -> *const c_char {
    pool.as_ref().map_or(ptr::null(), |p| p.fingerprint.as_ptr())
}

/// Teacher id at `index`, or null when out of range. Owned by the handle.
///
/// # Safety
/// `pool` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_pool_teacher_id(pool: *const TrPool, index: usize) -> *const c_char {
    pool.as_ref()
        .and_then(|p| p.ids.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Loads a router checkpoint. On success `*out` receives a handle that must be
/// released with [`tr_router_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tr_router_load(path: *const c_char, out: *mut *mut TrRouter) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let model = router::load_router(Path::new(path))?;
        *out = Box::into_raw(Box::new(TrRouter { model }));
        Ok(())
    })
}

/// # Safety
/// `router` must come from [`tr_router_load`] and not have been freed. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn tr_router_free(router: *mut TrRouter) {
    if !router.is_null() {
        drop(Box::from_raw(router));
    }
}

/// Number of teachers the router scores, or 0 for a null handle.
///
/// # Safety
/// `router` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_router_pool_size(router: *const TrRouter) -> usize {
    router.as_ref().map_or(0, |r| r.model.pool_size)
}

/// Fails with the fingerprint-mismatch code unless the router was trained on
/// exactly this pool.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn tr_router_check_pool(router: *const TrRouter, pool: *const TrPool) -> i32 {
    guard(|| {
        let router = router.as_ref().ok_or_else(|| null("router"))?;
        let pool = pool.as_ref().ok_or_else(|| null("pool"))?;
        router.model.check_fingerprint(&pool.pool.fingerprint())?;
        Ok(())
    })
}

/// Writes one score per teacher into `out_scores`, which must hold exactly
/// `tr_router_pool_size(router)` doubles.
///
/// # Safety
/// `text` must be NUL-terminated and `out_scores` valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn tr_router_score(
    router: *const TrRouter,
    text: *const c_char,
    out_scores: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let router = router.as_ref().ok_or_else(|| null("router"))?;
        let text = str_arg(text, "text")?;
        if out_scores.is_null() {
            return Err(null("out_scores"));
        }
        if out_len != router.model.pool_size {
            return Err(Fail(
                TR_ERR_BUFFER_LENGTH,
                format!("out_len {out_len} != pool size {}", router.model.pool_size),
            ));
        }
        let scores = router::score(&router.model, text)?;
        slice::from_raw_parts_mut(out_scores, out_len).copy_from_slice(&scores);
        Ok(())
    })
}

/// Index of the highest-scoring teacher for `text`, lower index on ties.
///
/// # Safety
/// `text` must be NUL-terminated and `out_index` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tr_router_route(
    router: *const TrRouter,
    text: *const c_char,
    out_index: *mut usize,
) -> i32 {
    guard(|| {
        let router = router.as_ref().ok_or_else(|| null("router"))?;
        let text = str_arg(text, "text")?;
        let out = out_arg(out_index, "out_index")?;
        *out = reward::argmax(&router::score(&router.model, text)?);
        Ok(())
    })
}

/// Mean log-probability of tokens `[prompt_boundary, len)`.
///
/// # Safety
/// `logprobs` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tr_learnability_reward(
    logprobs: *const f64,
    len: usize,
    prompt_boundary: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let values = slice_arg(logprobs, len, "logprobs")?;
        let out = out_arg(out, "out")?;
        let lp = TokenLogProbs {
            tokens: values
                .iter()
                .map(|&logprob| TokenLogProb {
                    text: String::new(),
                    logprob,
                })
                .collect(),
            prompt_boundary,
        };
        *out = reward::learnability_reward(&lp)?;
        Ok(())
    })
}

/// `(1 − alpha)·quality + alpha·learnability`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tr_combined_reward(quality: f64, learnability: f64, alpha: f64, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = reward::combined_reward(quality, learnability, alpha)?;
        Ok(())
    })
}

/// Normalizes `len` values across teachers into `out`, which may alias `values`.
///
/// # Safety
/// `values` must be valid for `len` reads and `out` for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn tr_normalize(values: *const f64, len: usize, method: u32, out: *mut f64) -> i32 {
    guard(|| {
        let method = match method {
            TR_NORMALIZATION_ZSCORE => Normalization::ZScore,
            TR_NORMALIZATION_MINMAX => Normalization::MinMax,
            other => {
                return Err(Fail(
                    TR_ERR_INVALID_ARGUMENT,
                    format!("unknown normalization method {other}"),
                ))
            }
        };
        let normalized = reward::normalize(slice_arg(values, len, "values")?, method);
        if len > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            slice::from_raw_parts_mut(out, len).copy_from_slice(&normalized);
        }
        Ok(())
    })
}

/// `σ(scores[b] − scores[a])`: probability that teacher `b` beats teacher `a`.
///
/// # Safety
/// `scores` must be valid for `len` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tr_pair_prob(scores: *const f64, len: usize, a: usize, b: usize, out: *mut f64) -> i32 {
    guard(|| {
        let scores = slice_arg(scores, len, "scores")?;
        let out = out_arg(out, "out")?;
        for index in [a, b] {
            if index >= len {
                return Err(Error::IndexOutOfRange { index, len }.into());
            }
        }
        *out = router::sigmoid(scores[b] - scores[a]);
        Ok(())
    })
}
