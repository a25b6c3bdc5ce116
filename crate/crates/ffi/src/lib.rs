//! C interface to the `unext` library.
//!
//! Models are opaque handles created by `unext_model_new` or
//! `unext_model_load` and released with `unext_model_free`. Every fallible
//! function returns a [`UnextStatus`]; on failure a description is available
//! from `unext_last_error` on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use unext::analysis::layer_plan;
use unext::arch::{build_model, Mode, Model, UNeXtConfig};
use unext::io::{load_checkpoint, save_checkpoint};
use unext::{Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnextStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Checkpoint = 5,
    Io = 6,
    Panic = 7,
    Other = 8,
}

/// Opaque model handle.
pub struct UnextModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> UnextStatus {
    match err {
        Error::Config(_) => UnextStatus::Config,
        Error::Shape(_) | Error::Construction(_) => UnextStatus::Shape,
        Error::Checkpoint(_) => UnextStatus::Checkpoint,
        Error::Io(_) | Error::Ingestion { .. } => UnextStatus::Io,
        Error::Contract(_) => UnextStatus::InvalidArgument,
        Error::Training(_) => UnextStatus::Other,
    }
}

struct Failure(UnextStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(UnextStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, turning errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UnextStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UnextStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            UnextStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(UnextStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_arg<'a>(p: *const UnextModel) -> Result<&'a UnextModel, Failure> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn boxed(mut model: Model<f32>) -> *mut UnextModel {
    model.set_mode(Mode::Eval);
    Box::into_raw(Box::new(UnextModel { model }))
}

/// Builds a freshly initialized model. `config_name` is `unext`, `unext-s`
/// or `unext-l`.
///
/// # Safety
/// `config_name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unext_model_new(config_name: *const c_char, seed: u64, out: *mut *mut UnextModel) -> UnextStatus {
    guard(|| {
        let name = str_arg(config_name, "config_name")?;
        let cfg = UNeXtConfig::by_name(name)
            .ok_or_else(|| Failure(UnextStatus::Config, format!("unknown config {name:?}")))?;
        let model = build_model(&cfg, seed)?;
        write_out(out, boxed(model))
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unext_model_load(path: *const c_char, out: *mut *mut UnextModel) -> UnextStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let model = load_checkpoint(&path)?;
        write_out(out, boxed(model))
    })
}

/// Writes a checkpoint file.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn unext_model_save(model: *const UnextModel, path: *const c_char) -> UnextStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_checkpoint(&m.model, &path)?;
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn unext_model_free(model: *mut UnextModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable parameters.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unext_model_param_count(model: *const UnextModel, out: *mut u64) -> UnextStatus {
    guard(|| {
        let m = model_arg(model)?;
        write_out(out, m.model.param_count() as u64)
    })
}

/// Multiply-accumulates of one forward pass on a `height`×`width` image.
///
/// # Safety
/// `model` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unext_model_macs(model: *const UnextModel, height: u32, width: u32, out: *mut u64) -> UnextStatus {
    guard(|| {
        let m = model_arg(model)?;
        let cfg = m.model.config();
        let cost = layer_plan(cfg, &[1, cfg.in_channels, height as usize, width as usize])?;
        write_out(out, cost.macs)
    })
}

/// Input channels and output channels of the model.
///
/// # Safety
/// `model` must come from this library; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn unext_model_channels(model: *const UnextModel, in_channels: *mut u32, out_channels: *mut u32) -> UnextStatus {
    guard(|| {
        let cfg = model_arg(model)?.model.config();
        write_out(in_channels, cfg.in_channels as u32)?;
        write_out(out_channels, cfg.out_channels as u32)
    })
}

/// Eval-mode forward of one planar `[in_channels, height, width]` image with
/// values in `[0,1]`. Writes `[out_channels, height, width]` logits.
///
/// # Safety
/// `image` must hold `in_channels·height·width` floats and `logits` must have
/// room for `logits_len` floats.
#[no_mangle]
pub unsafe extern "C" fn unext_model_infer(
    model: *const UnextModel,
    image: *const f32,
    height: u32,
    width: u32,
    logits: *mut f32,
    logits_len: usize,
) -> UnextStatus {
    guard(|| {
        let m = model_arg(model)?;
        if image.is_null() {
            return Err(null("image"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        let cfg = m.model.config();
        let (h, w) = (height as usize, width as usize);
        let need = cfg.out_channels * h * w;
        if logits_len < need {
            return Err(Failure(UnextStatus::InvalidArgument, format!("logits buffer holds {logits_len} floats, need {need}")));
        }
        let pixels = std::slice::from_raw_parts(image, cfg.in_channels * h * w);
        let x = Tensor::from_slice(&[1, cfg.in_channels, h, w], pixels)?;
        let y = m.model.infer(&x)?;
        ptr::copy_nonoverlapping(y.data().as_ptr(), logits, need);
        Ok(())
    })
}

/// Description of the last failure on this thread, or NULL after a success.
/// The string stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn unext_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
