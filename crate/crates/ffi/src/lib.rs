//! C interface to the classifier and the orthography utilities.
//!
//! Every fallible function returns an [`OrStatus`]. On failure,
//! [`or_last_error`] describes what went wrong on the calling thread. Input
//! strings are NUL-terminated UTF-8. Output strings go into caller buffers:
//! pass a null buffer (or one that is too short) to learn the size needed,
//! terminator included.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use orthoroberta::model::{Checkpoint, Model, ModelError};
use orthoroberta::orthography::{transliterate, LanguageId, Orthography, OrthographyError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    UnknownScript = 3,
    MissingCheckpoint = 4,
    BadCheckpoint = 5,
    BufferTooSmall = 6,
    InvalidArgument = 7,
    /// A bug: the library panicked or hit a numerical failure.
    Internal = 8,
}

/// Language codes used for input and output.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrLanguage {
    Kurdish = 0,
    Arabic = 1,
    Persian = 2,
    Urdu = 3,
}

impl From<LanguageId> for OrLanguage {
    fn from(l: LanguageId) -> Self {
        match l {
            LanguageId::Kurdish => OrLanguage::Kurdish,
            LanguageId::Arabic => OrLanguage::Arabic,
            LanguageId::Persian => OrLanguage::Persian,
            LanguageId::Urdu => OrLanguage::Urdu,
        }
    }
}

/// A loaded checkpoint. Opaque to C; free with [`or_model_free`].
pub struct OrModel {
    model: Model,
    orth: Orthography,
}

type Failure = (OrStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any failure or panic for [`or_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OrStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OrStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    (OrStatus::NullArgument, format!("`{what}` is null"))
}

/// # Safety
/// `p` is null or points to a NUL-terminated string.
unsafe fn text_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (OrStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

fn language_arg(code: i32) -> Result<LanguageId, Failure> {
    usize::try_from(code)
        .ok()
        .and_then(LanguageId::from_index)
        .ok_or_else(|| (OrStatus::InvalidArgument, format!("unknown language code {code}")))
}

fn orth_failure(e: OrthographyError) -> Failure {
    match e {
        OrthographyError::UnknownScript => (OrStatus::UnknownScript, e.to_string()),
        OrthographyError::EmptyInput => (OrStatus::InvalidArgument, e.to_string()),
        e => (OrStatus::Internal, e.to_string()),
    }
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::Orthography(o) => orth_failure(o),
        ModelError::Checkpoint { .. } | ModelError::Config(_) | ModelError::Tokenizer(_) => {
            (OrStatus::BadCheckpoint, e.to_string())
        }
        e => (OrStatus::Internal, e.to_string()),
    }
}

/// Copies `s` plus a terminator into `buf` and stores the size needed.
///
/// # Safety
/// `buf` is null or valid for `buf_len` bytes; `needed` is null or writable.
unsafe fn write_string(s: &str, buf: *mut c_char, buf_len: usize, needed: *mut usize) -> Result<(), Failure> {
    let n = s.len() + 1;
    if !needed.is_null() {
        *needed = n;
    }
    if buf.is_null() || buf_len < n {
        return Err((OrStatus::BufferTooSmall, format!("buffer needs {n} bytes")));
    }
    std::ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn or_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn or_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads the checkpoint directory `dir` into `*out`.
///
/// # Safety
/// `dir` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn or_model_load(dir: *const c_char, out: *mut *mut OrModel) -> OrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let dir = Path::new(text_arg(dir, "dir")?);
        if !dir.join("manifest.txt").is_file() {
            return Err((OrStatus::MissingCheckpoint, format!("no checkpoint at {}", dir.display())));
        }
        let ck = Checkpoint::load(dir).map_err(model_failure)?;
        *out = Box::into_raw(Box::new(OrModel {
            model: ck.model,
            orth: Orthography::builtin(),
        }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` is null or came from [`or_model_load`] and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn or_model_free(model: *mut OrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes of the head for `lang` (an [`OrLanguage`] value).
///
/// # Safety
/// `model` came from [`or_model_load`]; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn or_model_num_classes(model: *const OrModel, lang: i32, out: *mut usize) -> OrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.config.num_classes(language_arg(lang)?);
        Ok(())
    })
}

/// Detects the language of `text`, normalizes it and classifies it with that
/// language's head. Writes the class distribution into `probs`; when
/// `probs_len` is too small, nothing is written there and `*probs_written`
/// holds the length required.
///
/// # Safety
/// `model` came from [`or_model_load`]; `text` is NUL-terminated; `probs` is
/// valid for `probs_len` doubles; the other outputs are writable or null.
#[no_mangle]
pub unsafe extern "C" fn or_model_classify(
    model: *const OrModel,
    text: *const c_char,
    language: *mut OrLanguage,
    class_index: *mut usize,
    probs: *mut f64,
    probs_len: usize,
    probs_written: *mut usize,
) -> OrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let text = text_arg(text, "text")?;
        let p = m.model.predict(text, &m.orth).map_err(model_failure)?;
        if !probs_written.is_null() {
            *probs_written = p.probs.len();
        }
        if probs.is_null() || probs_len < p.probs.len() {
            return Err((
                OrStatus::BufferTooSmall,
                format!("probability buffer needs {} entries", p.probs.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(p.probs.as_ptr(), probs, p.probs.len());
        if !language.is_null() {
            *language = p.language.into();
        }
        if !class_index.is_null() {
            *class_index = p.class;
        }
        Ok(())
    })
}

/// Script-based language detection.
///
/// # Safety
/// `text` is NUL-terminated; outputs are writable or null.
#[no_mangle]
pub unsafe extern "C" fn or_detect(text: *const c_char, language: *mut OrLanguage, confidence: *mut f64) -> OrStatus {
    guard(|| {
        let text = text_arg(text, "text")?;
        let d = Orthography::builtin().detect(text).map_err(orth_failure)?;
        if !language.is_null() {
            *language = d.language.into();
        }
        if !confidence.is_null() {
            *confidence = d.confidence;
        }
        Ok(())
    })
}

/// Normalizes `text` for `lang` (an [`OrLanguage`] value).
///
/// # Safety
/// `text` is NUL-terminated; `buf` is null or valid for `buf_len` bytes;
/// `needed` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn or_normalize(
    text: *const c_char,
    lang: i32,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> OrStatus {
    guard(|| {
        let text = text_arg(text, "text")?;
        let lang = language_arg(lang)?;
        write_string(&Orthography::builtin().normalize(text, lang), buf, buf_len, needed)
    })
}

/// Replaces variant letters by seeded co-variants of the same class.
///
/// # Safety
/// As for [`or_normalize`].
#[no_mangle]
pub unsafe extern "C" fn or_transliterate(
    text: *const c_char,
    seed: u64,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> OrStatus {
    guard(|| {
        let text = text_arg(text, "text")?;
        let out = transliterate(text, &Orthography::builtin().table, seed);
        write_string(&out, buf, buf_len, needed)
    })
}
