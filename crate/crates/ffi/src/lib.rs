//! C ABI over the `ample` engine.
//!
//! Every entry point returns an [`AmpleStatus`]. On failure the message is
//! available from [`ample_last_error_message`] until the next call on the
//! same thread. Objects cross the boundary as opaque handles that the
//! caller releases with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ample::evaluator::{self, Task, BASE, NEW, TARGET};
use ample::feature_store::{self, FeatureBundle, SynthSpec};
use ample::networks::Model;
use ample::trainer::{self, ClassScope, TrainConfig};
use ample::Error;

/// Result code of every `ample_*` call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpleStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Divergence = 6,
    Numeric = 7,
    DegenerateInput = 8,
    Panic = 9,
}

/// Opaque feature bundle.
pub struct AmpleBundle(FeatureBundle);

/// Opaque trained or loaded model.
pub struct AmpleModel(Model);

/// Training hyperparameters. Fill with [`ample_train_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AmpleTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    /// Weight-generator hidden width; 0 selects the default.
    pub hidden_dim: usize,
    /// Nonzero trains on every class instead of the base split only.
    pub all_classes: u8,
}

/// Base-to-novel scores. Accuracies are fractions in `[0, 1]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmpleB2nReport {
    pub base_accuracy: f64,
    pub new_accuracy: f64,
    pub hm: f64,
    pub base_correct: usize,
    pub base_total: usize,
    pub new_correct: usize,
    pub new_total: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AmpleStatus {
    match e {
        Error::Config(_) | Error::Shape(_) => AmpleStatus::Config,
        Error::Io { .. } => AmpleStatus::Io,
        Error::Format { .. } | Error::Manifest(_) | Error::Integrity(_) | Error::Json(_) | Error::Csv(_) => {
            AmpleStatus::Format
        }
        Error::Divergence { .. } => AmpleStatus::Divergence,
        Error::NumericDomain { .. } | Error::DegenerateVector { .. } => AmpleStatus::Numeric,
        Error::DegenerateInput(_) | Error::UndefinedConditional(_) => AmpleStatus::DegenerateInput,
    }
}

enum Failure {
    Status(AmpleStatus, String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(AmpleStatus::NullPointer, format!("{what} is null"))
}

/// Run `body`, convert its error or panic into a status, and record the message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AmpleStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AmpleStatus::Ok,
        Ok(Err(Failure::Status(status, message))) => {
            set_last_error(message);
            status
        }
        Ok(Err(Failure::Engine(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            AmpleStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(AmpleStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next `ample_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ample_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Load a bundle from a directory or manifest path.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_bundle_load(path: *const c_char, verify_logits: u8, out: *mut *mut AmpleBundle) -> AmpleStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let bundle = feature_store::load_bundle(&path, verify_logits != 0)?;
        write_out(out, Box::into_raw(Box::new(AmpleBundle(bundle))), "out")
    })
}

/// Synthesize a bundle with clean prompts (`prompt_bias` 0) or decoy
/// prompts (`prompt_bias` > 0).
///
/// # Safety
/// `dims` must point to `num_backbones` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_bundle_synth(
    num_samples: usize,
    num_classes: usize,
    num_prompts: usize,
    dims: *const usize,
    num_backbones: usize,
    class_separation: f64,
    prompt_bias: f64,
    seed: u64,
    out: *mut *mut AmpleBundle,
) -> AmpleStatus {
    guard(|| {
        let dims = slice_arg(dims, num_backbones, "dims")?.to_vec();
        let spec = SynthSpec {
            prompt_bias,
            ..SynthSpec::new(num_samples, num_classes, num_prompts, dims, class_separation)
        };
        let bundle = feature_store::synth_bundle(&spec, seed)?;
        write_out(out, Box::into_raw(Box::new(AmpleBundle(bundle))), "out")
    })
}

/// Write a bundle to a directory.
///
/// # Safety
/// `bundle` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ample_bundle_save(bundle: *const AmpleBundle, dir: *const c_char) -> AmpleStatus {
    guard(|| {
        let bundle = bundle.as_ref().ok_or_else(|| null("bundle"))?;
        let dir = path_arg(dir, "dir")?;
        Ok(bundle.0.save(&dir)?)
    })
}

/// Sample, class and prompt counts of a bundle. Any out pointer may be null.
///
/// # Safety
/// `bundle` must come from this library; non-null outs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_bundle_dims(
    bundle: *const AmpleBundle,
    num_samples: *mut usize,
    num_classes: *mut usize,
    num_prompts: *mut usize,
    num_backbones: *mut usize,
) -> AmpleStatus {
    guard(|| {
        let b = &bundle.as_ref().ok_or_else(|| null("bundle"))?.0;
        for (out, v) in [
            (num_samples, b.num_samples()),
            (num_classes, b.num_classes()),
            (num_prompts, b.num_prompts()),
            (num_backbones, b.num_backbones()),
        ] {
            if !out.is_null() {
                out.write(v);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ample_bundle_free(bundle: *mut AmpleBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Default hyperparameters.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_train_config_default(out: *mut AmpleTrainConfig) -> AmpleStatus {
    guard(|| {
        let d = TrainConfig::default();
        let c = AmpleTrainConfig {
            batch_size: d.batch_size,
            epochs: d.epochs,
            lr: d.lr,
            warmup_epochs: d.warmup_epochs,
            warmup_lr: d.warmup_lr,
            alpha: d.alpha,
            beta: d.beta,
            seed: d.seed,
            hidden_dim: d.hidden_dim.unwrap_or(0),
            all_classes: u8::from(d.classes == ClassScope::All),
        };
        write_out(out, c, "out")
    })
}

/// Fit a model on `bundle`.
///
/// # Safety
/// `bundle` and `config` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_train(
    bundle: *const AmpleBundle,
    config: *const AmpleTrainConfig,
    out: *mut *mut AmpleModel,
) -> AmpleStatus {
    guard(|| {
        let bundle = &bundle.as_ref().ok_or_else(|| null("bundle"))?.0;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let config = TrainConfig {
            batch_size: c.batch_size,
            epochs: c.epochs,
            lr: c.lr,
            warmup_epochs: c.warmup_epochs,
            warmup_lr: c.warmup_lr,
            alpha: c.alpha,
            beta: c.beta,
            seed: c.seed,
            hidden_dim: (c.hidden_dim > 0).then_some(c.hidden_dim),
            classes: if c.all_classes != 0 { ClassScope::All } else { ClassScope::Base },
        };
        let state = trainer::fit(bundle, &config)?;
        write_out(out, Box::into_raw(Box::new(AmpleModel(state.model))), "out")
    })
}

/// # Safety
/// `model` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ample_model_save(model: *const AmpleModel, dir: *const c_char) -> AmpleStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let dir = path_arg(dir, "dir")?;
        Ok(model.0.save(&dir)?)
    })
}

/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_model_load(dir: *const c_char, out: *mut *mut AmpleModel) -> AmpleStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let model = Model::load(&dir)?;
        write_out(out, Box::into_raw(Box::new(AmpleModel(model))), "out")
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ample_model_free(model: *mut AmpleModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Base-to-novel evaluation on the bundle's test split.
///
/// # Safety
/// `model` and `bundle` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_eval_b2n(
    model: *const AmpleModel,
    bundle: *const AmpleBundle,
    out: *mut AmpleB2nReport,
) -> AmpleStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let bundle = &bundle.as_ref().ok_or_else(|| null("bundle"))?.0;
        let r = evaluator::eval_base_to_novel(model, bundle)?;
        let (base, new) = (r.splits[BASE], r.splits[NEW]);
        let report = AmpleB2nReport {
            base_accuracy: base.accuracy,
            new_accuracy: new.accuracy,
            hm: r.hm.unwrap_or(0.0),
            base_correct: base.n_correct,
            base_total: base.n_total,
            new_correct: new.n_correct,
            new_total: new.n_total,
        };
        write_out(out, report, "out")
    })
}

/// Plain accuracy on the target's test split over all of its classes.
/// `domain_gen` only changes the task label, not the arithmetic.
///
/// # Safety
/// `model` and `target` must be valid; `accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_eval_transfer(
    model: *const AmpleModel,
    target: *const AmpleBundle,
    domain_gen: u8,
    accuracy: *mut f64,
) -> AmpleStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let target = &target.as_ref().ok_or_else(|| null("target"))?.0;
        let task = if domain_gen != 0 { Task::DomainGen } else { Task::CrossDataset };
        let r = evaluator::eval_transfer(model, target, task)?;
        write_out(accuracy, r.splits[TARGET].accuracy, "accuracy")
    })
}

/// `2·base·new / (base + new)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ample_harmonic_mean(base: f64, new: f64, out: *mut f64) -> AmpleStatus {
    guard(|| write_out(out, evaluator::harmonic_mean(base, new)?, "out"))
}

/// Two-tailed paired Student t-test. Either out pointer may be null.
///
/// # Safety
/// `a` and `b` must each point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn ample_paired_t_test(
    a: *const f64,
    b: *const f64,
    len: usize,
    t_statistic: *mut f64,
    p_value: *mut f64,
) -> AmpleStatus {
    guard(|| {
        let a = slice_arg(a, len, "a")?;
        let b = slice_arg(b, len, "b")?;
        let r = evaluator::paired_t_test(a, b)?;
        if !t_statistic.is_null() {
            t_statistic.write(r.t);
        }
        if !p_value.is_null() {
            p_value.write(r.p_value);
        }
        Ok(())
    })
}
