//! C ABI over the `discourse` library.
//!
//! Every fallible function returns a [`DiscourseStatus`]; on failure the
//! message is available from [`discourse_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.
//! Labels cross the boundary as codes 0-4 in the order Insertion,
//! Concretization, Projection, Restatement, Extension.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use discourse::classifier::{class_weights, Checkpoint};
use discourse::corpus::{compute_stats, load_dataset};
use discourse::pipeline::FeatureExtractor;
use discourse::{Dataset, DiscourseLabel, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscourseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    BackendUnavailable = 5,
    Checkpoint = 6,
    Internal = 7,
    Panic = 8,
}

pub const DISCOURSE_LABEL_COUNT: usize = 5;

/// A loaded dataset file.
pub struct DiscourseDataset {
    inner: Dataset,
}

/// A model restored from a checkpoint, with the encoders it was trained with.
pub struct DiscourseModel {
    model: discourse::DiscourseModel,
    extractor: FeatureExtractor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> DiscourseStatus {
    match err {
        Error::Io { .. } | Error::CaptionsUnavailable(_) => DiscourseStatus::Io,
        Error::MalformedLine { .. }
        | Error::UnknownLabel { .. }
        | Error::DuplicateId(_)
        | Error::MissingLabel(_)
        | Error::EmptyText(_)
        | Error::ImageDecode { .. }
        | Error::Json(_) => DiscourseStatus::Parse,
        Error::BackendUnavailable(_) => DiscourseStatus::BackendUnavailable,
        Error::Checkpoint(_) => DiscourseStatus::Checkpoint,
        Error::NonFiniteLoss { .. } | Error::Image(_) => DiscourseStatus::Internal,
        _ => DiscourseStatus::InvalidArgument,
    }
}

fn fail(status: DiscourseStatus, msg: impl Into<String>) -> DiscourseStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating library errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DiscourseStatus>) -> DiscourseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DiscourseStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(DiscourseStatus::Panic, "internal panic"),
    }
}

fn lib_err(err: Error) -> DiscourseStatus {
    fail(status_of(&err), err.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DiscourseStatus> {
    if p.is_null() {
        return Err(fail(DiscourseStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DiscourseStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn labels_arg(p: *const u8, n: usize, what: &str) -> Result<Vec<DiscourseLabel>, DiscourseStatus> {
    if p.is_null() {
        return Err(fail(DiscourseStatus::NullPointer, format!("{what} is NULL")));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&c| {
            DiscourseLabel::from_code(c as usize)
                .ok_or_else(|| fail(DiscourseStatus::InvalidArgument, format!("{what} contains label code {c}")))
        })
        .collect()
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), DiscourseStatus> {
    if p.is_null() {
        Err(fail(DiscourseStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// Message for the most recent failure on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn discourse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a label code, or NULL for an invalid code.
#[no_mangle]
pub extern "C" fn discourse_label_name(code: u8) -> *const c_char {
    const NAMES: [&CStr; DISCOURSE_LABEL_COUNT] =
        [c"insertion", c"concretization", c"projection", c"restatement", c"extension"];
    NAMES.get(code as usize).map_or(ptr::null(), |n| n.as_ptr())
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn discourse_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a line-delimited dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn discourse_dataset_load(
    path: *const c_char,
    require_labels: bool,
    out: *mut *mut DiscourseDataset,
) -> DiscourseStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = load_dataset(Path::new(path), require_labels).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DiscourseDataset { inner }));
        Ok(())
    })
}

/// Number of posts, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn discourse_dataset_len(dataset: *const DiscourseDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Corpus statistics as a JSON string; free it with `discourse_string_free`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn discourse_dataset_stats_json(
    dataset: *const DiscourseDataset,
    out: *mut *mut c_char,
) -> DiscourseStatus {
    guard(|| {
        non_null(dataset, "dataset")?;
        non_null(out, "out")?;
        let stats = compute_stats(&(*dataset).inner.posts).map_err(lib_err)?;
        let json = serde_json::to_string(&stats).map_err(|e| lib_err(e.into()))?;
        *out = CString::new(json).map_err(|_| fail(DiscourseStatus::Internal, "NUL in JSON"))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn discourse_dataset_free(dataset: *mut DiscourseDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Inverse-frequency weights `N / (5 * N_c)` from five label counts.
///
/// # Safety
/// `counts` must point to 5 readable values and `out` to 5 writable ones.
#[no_mangle]
pub unsafe extern "C" fn discourse_class_weights(counts: *const usize, out: *mut f64) -> DiscourseStatus {
    guard(|| {
        non_null(counts, "counts")?;
        non_null(out, "out")?;
        let counts = std::slice::from_raw_parts(counts, DISCOURSE_LABEL_COUNT);
        let map = DiscourseLabel::ALL.into_iter().zip(counts.iter().copied()).collect();
        let w = class_weights(&map).map_err(lib_err)?;
        ptr::copy_nonoverlapping(w.0.as_ptr(), out, DISCOURSE_LABEL_COUNT);
        Ok(())
    })
}

/// Per-class F1 (0-100) into `per_class[5]` and weighted F1 into `weighted`.
///
/// # Safety
/// `predictions` and `truths` must hold `n` label codes; `per_class` must
/// have room for 5 values; `weighted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn discourse_f1_report(
    predictions: *const u8,
    truths: *const u8,
    n: usize,
    per_class: *mut f64,
    weighted: *mut f64,
) -> DiscourseStatus {
    guard(|| {
        non_null(per_class, "per_class")?;
        non_null(weighted, "weighted")?;
        let p = labels_arg(predictions, n, "predictions")?;
        let t = labels_arg(truths, n, "truths")?;
        let report = discourse::f1_report(&p, &t).map_err(lib_err)?;
        ptr::copy_nonoverlapping(report.per_class_array().as_ptr(), per_class, DISCOURSE_LABEL_COUNT);
        *weighted = report.weighted_f1;
        Ok(())
    })
}

/// Approximate-randomisation p-value for the weighted-F1 difference of two
/// prediction lists.
///
/// # Safety
/// The three label arrays must each hold `n` codes; `p_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn discourse_significance(
    predictions_a: *const u8,
    predictions_b: *const u8,
    truths: *const u8,
    n: usize,
    trials: usize,
    seed: u64,
    p_value: *mut f64,
) -> DiscourseStatus {
    guard(|| {
        non_null(p_value, "p_value")?;
        let a = labels_arg(predictions_a, n, "predictions_a")?;
        let b = labels_arg(predictions_b, n, "predictions_b")?;
        let t = labels_arg(truths, n, "truths")?;
        *p_value = discourse::significance(&a, &b, &t, trials, seed).map_err(lib_err)?;
        Ok(())
    })
}

/// Restores a model from a checkpoint directory or file. `caption_source`
/// may be NULL for the default `precomputed:captions.jsonl`.
///
/// # Safety
/// String arguments must be NUL-terminated (or NULL where allowed); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn discourse_model_load(
    checkpoint: *const c_char,
    caption_source: *const c_char,
    out: *mut *mut DiscourseModel,
) -> DiscourseStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = str_arg(checkpoint, "checkpoint")?;
        let defaults = discourse::RunConfig::default();
        let captions = if caption_source.is_null() {
            defaults.caption_source.as_str()
        } else {
            str_arg(caption_source, "caption_source")?
        };
        let ck = Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        let model = ck.model().map_err(lib_err)?;
        let extractor = FeatureExtractor::new(&ck.model_config, &ck.text_backend, &ck.image_backend, captions, defaults.memory_cap)
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DiscourseModel { model, extractor }));
        Ok(())
    })
}

/// Classifies one post of `dataset`. Writes the five label probabilities
/// to `probs` and the arg-max code to `label`.
///
/// # Safety
/// Handles must be live; `post_id` NUL-terminated; `probs` must have room
/// for 5 values; `label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn discourse_model_predict(
    model: *const DiscourseModel,
    dataset: *const DiscourseDataset,
    post_id: *const c_char,
    probs: *mut f64,
    label: *mut u8,
) -> DiscourseStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(dataset, "dataset")?;
        non_null(probs, "probs")?;
        non_null(label, "label")?;
        let id = str_arg(post_id, "post_id")?;
        let m = &*model;
        let posts = m.extractor.encode(&(*dataset).inner, &[id.to_string()]).map_err(lib_err)?;
        let (_, p) = m.model.forward(&posts[0]).map_err(lib_err)?;
        ptr::copy_nonoverlapping(p.as_ptr(), probs, DISCOURSE_LABEL_COUNT);
        *label = discourse::classifier::argmax(&p).code() as u8;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn discourse_model_free(model: *mut DiscourseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
