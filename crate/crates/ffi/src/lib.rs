//! C interface to the captioning engine.
//!
//! Models are opaque `NovcapModel` handles created by `novcap_model_load`
//! (or `novcap_model_expand`) and released with `novcap_model_free`.
//! Every fallible call returns a `NovcapStatus`; on failure the message is
//! available from `novcap_last_error` on the same thread until the next
//! call. Strings handed out by the library are freed with
//! `novcap_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use novcap::cbs::{caption_image, CaptionOptions, Decoder};
use novcap::features::{ImageRecord, Tag};
use novcap::model::CaptionModel;
use novcap::numerics::Vector;
use novcap::pipeline::expand_with_entries;
use novcap::{checkpoint, Error};

/// Result codes. The first four match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NovcapStatus {
    Ok = 0,
    /// Bad argument or configuration value.
    InvalidArgument = 1,
    /// Malformed or inconsistent input data (including checkpoints and I/O).
    Data = 2,
    /// Non-finite values or a failed numeric check.
    Numeric = 3,
    NullPointer = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// Opaque model handle.
pub struct NovcapModel {
    model: CaptionModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> NovcapStatus {
    match e.exit_code() {
        1 => NovcapStatus::InvalidArgument,
        3 => NovcapStatus::Numeric,
        _ => NovcapStatus::Data,
    }
}

struct Failure(NovcapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NovcapStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording its error and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NovcapStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NovcapStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error (panic)");
            NovcapStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(NovcapStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn model_arg<'a>(m: *const NovcapModel) -> Result<&'a NovcapModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(NovcapStatus::Internal, "string contains NUL".into()))
}

/// Message of the last failed call on this thread ("" if none). The pointer
/// stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn novcap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn novcap_model_load(path: *const c_char, out: *mut *mut NovcapModel) -> NovcapStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = checkpoint::load(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(NovcapModel { model }));
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn novcap_model_save(model: *const NovcapModel, path: *const c_char) -> NovcapStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = str_arg(path, "path")?;
        checkpoint::save(&m.model, &PathBuf::from(path))?;
        Ok(())
    })
}

/// Adds the categories of a feature file; the expanded model is a new
/// handle in `*out` and `model` is left unchanged.
///
/// # Safety
/// `model` must be a live handle, `feature_path` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn novcap_model_expand(
    model: *const NovcapModel,
    feature_path: *const c_char,
    out: *mut *mut NovcapModel,
) -> NovcapStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = str_arg(feature_path, "feature_path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let entries = novcap::features::read_feature_entries(&PathBuf::from(path))?;
        let expanded = expand_with_entries(&m.model, &entries)?;
        *out = Box::into_raw(Box::new(NovcapModel { model: expanded }));
        Ok(())
    })
}

/// Vocabulary size, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn novcap_model_vocab_size(model: *const NovcapModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.vocab_size())
}

/// Image-feature dimension expected by `novcap_caption`, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn novcap_model_feature_dim(model: *const NovcapModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.feature_dim)
}

/// Captions one image. `tags`/`tag_plural` are `num_tags` category names and
/// plural flags (both may be null when `num_tags` is 0). With
/// `use_constraints` nonzero, tags of categories added by expansion are
/// forced into the caption. The caption is written to `*out_caption` (free
/// it with `novcap_string_free`) and its log-probability to `*out_logprob`.
///
/// # Safety
/// `feature` must point to `dim` doubles, `tags` and `tag_plural` to
/// `num_tags` entries each, and the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn novcap_caption(
    model: *const NovcapModel,
    feature: *const f64,
    dim: usize,
    tags: *const *const c_char,
    tag_plural: *const bool,
    num_tags: usize,
    beam_size: usize,
    use_constraints: bool,
    out_caption: *mut *mut c_char,
    out_logprob: *mut f64,
) -> NovcapStatus {
    guard(|| {
        let m = model_arg(model)?;
        if feature.is_null() {
            return Err(null("feature"));
        }
        if out_caption.is_null() || out_logprob.is_null() {
            return Err(null("output pointer"));
        }
        if num_tags > 0 && (tags.is_null() || tag_plural.is_null()) {
            return Err(null("tags"));
        }
        let mut record_tags = Vec::with_capacity(num_tags);
        for i in 0..num_tags {
            record_tags.push(Tag {
                category: str_arg(*tags.add(i), "tag")?.to_string(),
                plural: *tag_plural.add(i),
            });
        }
        let record = ImageRecord {
            image_id: String::new(),
            feature: Vector::from_vec(std::slice::from_raw_parts(feature, dim).to_vec()),
            tags: record_tags,
            captions: Vec::new(),
        };
        let opts = CaptionOptions {
            beam_size,
            use_constraints,
            ..CaptionOptions::default()
        };
        let decoder = Decoder::new(&m.model, m.model.config.bias_policy)?;
        let caption = caption_image(&decoder, &record, &opts)?;
        *out_caption = into_c_string(caption.text)?;
        *out_logprob = caption.logprob;
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn novcap_model_free(model: *mut NovcapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn novcap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
