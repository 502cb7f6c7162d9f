//! C ABI over the stenoseg library.
//!
//! Every function returns a [`StenoStatus`]. On failure a message is
//! available from [`steno_last_error`] on the same thread until the next
//! call into this library. Models are opaque handles released with
//! [`steno_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stenoseg::config::RunConfig;
use stenoseg::mask::Mask;
use stenoseg::metrics::{self, ConfusionCounts};
use stenoseg::models::Model;
use stenoseg::tensor::Tensor;
use stenoseg::train::predict_logits;
use stenoseg::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StenoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Mismatch = 6,
    NonFinite = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct StenoModel {
    config: RunConfig,
    model: Model<f32>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StenoConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

/// Undefined ratios (zero denominators) have their `*_defined` flag cleared
/// and the value set to 0.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StenoPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> StenoStatus {
    match e {
        Error::Config { .. } | Error::InvalidSpec(_) => StenoStatus::Config,
        Error::Io(_) | Error::ImageDecode { .. } => StenoStatus::Io,
        Error::Format(_) | Error::Version { .. } | Error::Json(_) => StenoStatus::Format,
        Error::CheckpointMismatch(_) | Error::ShapeMismatch { .. } => StenoStatus::Mismatch,
        Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => StenoStatus::NonFinite,
        _ => StenoStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (StenoStatus, String)>) -> StenoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            StenoStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StenoStatus::Panic
        }
    }
}

fn lib(e: Error) -> (StenoStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StenoStatus, String) {
    (StenoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (StenoStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (StenoStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn steno_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a freshly initialised model from configuration text (the
/// `key = value` format; empty text selects every default).
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steno_model_build(config: *const c_char, out: *mut *mut StenoModel) -> StenoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config, "config")?;
        let config = RunConfig::parse(text).map_err(lib)?;
        let model = Model::build(&config.model_spec(), config.optim.seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(StenoModel { config, model }));
        Ok(())
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steno_model_load(path: *const c_char, out: *mut *mut StenoModel) -> StenoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let (config, model) = stenoseg::cli::load_model(Path::new(path)).map_err(lib)?;
        *out = Box::into_raw(Box::new(StenoModel { config, model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn steno_model_free(model: *mut StenoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steno_model_param_count(model: *const StenoModel, out: *mut u64) -> StenoStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.model.count_params() as u64;
        Ok(())
    })
}

/// Side length the model was configured for; inputs must be square at
/// this size.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn steno_model_input_size(model: *const StenoModel, out: *mut usize) -> StenoStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.config.data.size;
        Ok(())
    })
}

/// Predicts a binary mask (0/1 bytes) for a `size x size` row-major image
/// with intensities in `[0, 1]`.
///
/// # Safety
/// `image` must hold `size * size` floats and `mask_out` as many bytes.
#[no_mangle]
pub unsafe extern "C" fn steno_model_predict(
    model: *const StenoModel,
    image: *const f32,
    size: usize,
    mask_out: *mut u8,
) -> StenoStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if image.is_null() {
            return Err(null("image"));
        }
        if mask_out.is_null() {
            return Err(null("mask_out"));
        }
        if size == 0 {
            return Err((StenoStatus::InvalidArgument, "size is zero".into()));
        }
        let pixels = std::slice::from_raw_parts(image, size * size).to_vec();
        let input = Tensor::new([1, 1, size, size], pixels).map_err(lib)?;
        let logits = predict_logits(&m.model, &input).map_err(lib)?;
        let per = stenoseg::train::split_batch(&logits).remove(0);
        let mask = metrics::thresholded_mask(&per, m.config.train.threshold).map_err(lib)?;
        ptr::copy_nonoverlapping(mask.data().as_ptr(), mask_out, size * size);
        Ok(())
    })
}

/// Pixel confusion counts of two binary masks of `len` bytes each.
///
/// # Safety
/// `pred` and `gt` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn steno_confusion(
    pred: *const u8,
    gt: *const u8,
    len: usize,
    out: *mut StenoConfusion,
) -> StenoStatus {
    guard(|| {
        if pred.is_null() || gt.is_null() {
            return Err(null("mask"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = Mask::new(1, len, std::slice::from_raw_parts(pred, len).to_vec()).map_err(lib)?;
        let g = Mask::new(1, len, std::slice::from_raw_parts(gt, len).to_vec()).map_err(lib)?;
        let c = metrics::confusion(&p, &g).map_err(lib)?;
        *out = StenoConfusion { tp: c.tp, fp: c.fp, fn_: c.fn_, tn: c.tn };
        Ok(())
    })
}

/// Precision, recall and F1 from confusion counts.
///
/// # Safety
/// Both pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn steno_prf1(counts: *const StenoConfusion, out: *mut StenoPrf) -> StenoStatus {
    guard(|| {
        let c = counts.as_ref().ok_or_else(|| null("counts"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = metrics::precision_recall_f1(&ConfusionCounts { tp: c.tp, fp: c.fp, fn_: c.fn_, tn: c.tn });
        *out = StenoPrf {
            precision: m.precision.unwrap_or(0.0),
            recall: m.recall.unwrap_or(0.0),
            f1: m.f1.unwrap_or(0.0),
            precision_defined: m.precision.is_some(),
            recall_defined: m.recall.is_some(),
            f1_defined: m.f1.is_some(),
        };
        Ok(())
    })
}
