//! C ABI over `difflab`.
//!
//! Conventions:
//! * every fallible function returns a [`DlStatus`]; `DL_OK` is zero;
//! * objects are opaque handles created by `dl_*_new`/`dl_*_load` and
//!   released by the matching `dl_*_free` (passing NULL to a free is a no-op);
//! * outputs go through caller-provided pointers, arrays come with explicit
//!   lengths;
//! * after a failure, `dl_last_error_message` returns a description of it
//!   (per thread);
//! * panics never cross the boundary; they surface as `DL_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use difflab::cli::{cmd_train, ExperimentConfig};
use difflab::denoisers::{load_checkpoint, save_checkpoint, Checkpoint, Denoiser, VisibilitySpec};
use difflab::io::OutputFormat;
use difflab::rng::RngStream;
use difflab::samplers::{generate, SamplerConfig, SamplerFamily};
use difflab::scaling::{fit_isoflop, fit_power_law, invert_quality_for_steps, Curve, StepsForTarget, SweepRecord};
use difflab::vocab::TokenSequence;
use difflab::Error;

/// Result codes. Values 2–4 coincide with the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlStatus {
    DlOk = 0,
    /// A required pointer was NULL or a buffer was too small.
    DlInvalidArgument = 1,
    /// Invalid configuration, value out of domain or failed validation.
    DlConfig = 2,
    /// Numerical failure or degenerate input.
    DlNumerical = 3,
    /// Artifact mismatch, I/O or format error.
    DlArtifact = 4,
    /// The requested quantity does not exist (e.g. unreachable target).
    DlUnreachable = 5,
    /// A panic was caught at the boundary.
    DlPanic = 6,
}

/// Sampler families, as in the library.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlSampler {
    DlSamplerAr = 0,
    DlSamplerAncestralMasked = 1,
    DlSamplerAncestralUniform = 2,
    DlSamplerEsoBlock = 3,
}

/// Opaque model handle (a loaded checkpoint).
pub struct DlModel {
    inner: Checkpoint,
}

/// Quadratic IsoFLOP fit; `n_star`/`loss_star` are NaN when `interior` is 0.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DlIsoFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub interior: i32,
    pub n_star: f64,
    pub loss_star: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DlPowerLaw {
    pub exponent: f64,
    pub intercept: f64,
    pub residual_sum: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> DlStatus {
    match difflab::cli::exit_code(err) {
        2 => DlStatus::DlConfig,
        3 => DlStatus::DlNumerical,
        _ => DlStatus::DlArtifact,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (DlStatus, String)>) -> DlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlStatus::DlOk,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic caught at the C boundary");
            DlStatus::DlPanic
        }
    }
}

fn lib<T>(r: difflab::Result<T>) -> Result<T, (DlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn invalid(msg: &str) -> (DlStatus, String) {
    (DlStatus::DlInvalidArgument, msg.to_string())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DlStatus, String)> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (DlStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (always
/// NUL-terminated, truncated if needed). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_model_load(path: *const c_char, out: *mut *mut DlModel) -> DlStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is NULL"));
        }
        let path = c_str(path, "path")?;
        let inner = lib(load_checkpoint(path))?;
        *out = Box::into_raw(Box::new(DlModel { inner }));
        Ok(())
    })
}

/// Write a model to a checkpoint file (atomically).
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dl_model_save(model: *const DlModel, path: *const c_char) -> DlStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("model is NULL"))?;
        let path = c_str(path, "path")?;
        lib(save_checkpoint(path, &m.inner))
    })
}

/// Train from a TOML experiment configuration, writing the run's artifacts
/// into `out_dir`, and return the trained model.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_train_from_config(
    config_toml: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut DlModel,
) -> DlStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is NULL"));
        }
        let cfg = lib(ExperimentConfig::from_toml(c_str(config_toml, "config_toml")?))?;
        let dir = Path::new(c_str(out_dir, "out_dir")?);
        lib(cmd_train(&cfg, dir, OutputFormat::Csv))?;
        let inner = lib(load_checkpoint(dir.join("checkpoint.dlck")))?;
        *out = Box::into_raw(Box::new(DlModel { inner }));
        Ok(())
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Sequence length, vocabulary size (including any mask token), mask index
/// (−1 if none) and parameter count.
///
/// # Safety
/// `model` must come from this library; out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn dl_model_shape(
    model: *const DlModel,
    seq_len: *mut usize,
    vocab_size: *mut usize,
    mask_index: *mut i64,
    param_count: *mut usize,
) -> DlStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is NULL"))?.inner.model;
        if let Some(p) = seq_len.as_mut() {
            *p = m.seq_len();
        }
        if let Some(p) = vocab_size.as_mut() {
            *p = m.vocab().size();
        }
        if let Some(p) = mask_index.as_mut() {
            *p = m.vocab().mask().map_or(-1, |v| v as i64);
        }
        if let Some(p) = param_count.as_mut() {
            *p = m.param_count();
        }
        Ok(())
    })
}

/// Bidirectional denoiser prediction at time `t`: writes `len × vocab_size`
/// probabilities (row-major) into `probs`.
///
/// # Safety
/// `tokens` must hold `len` entries and `probs` `probs_len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn dl_model_predict(
    model: *const DlModel,
    tokens: *const usize,
    len: usize,
    t: f64,
    probs: *mut f64,
    probs_len: usize,
) -> DlStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| invalid("model is NULL"))?.inner.model;
        let z = lib(TokenSequence::new(slice(tokens, len, "tokens")?.to_vec(), m.vocab()))?;
        let field = lib(m.predict(&z, t, &VisibilitySpec::bidirectional()))?;
        let k = m.vocab().size();
        if probs.is_null() || probs_len < len * k {
            return Err(invalid(&format!("probs needs {} slots", len * k)));
        }
        let out = std::slice::from_raw_parts_mut(probs, len * k);
        for i in 0..len {
            out[i * k..(i + 1) * k].copy_from_slice(field.row(i));
        }
        Ok(())
    })
}

/// Generate one sequence into `tokens` (`len` must equal the model length).
/// `steps` is the ancestral discretization, `block_spacing` the Eso block
/// spacing (0 = one block per position). Writes the number of denoiser
/// evaluations to `nfe` when non-NULL.
///
/// # Safety
/// `tokens` must have `len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn dl_model_sample(
    model: *const DlModel,
    sampler: DlSampler,
    steps: usize,
    block_spacing: usize,
    seed: u64,
    tokens: *mut usize,
    len: usize,
    nfe: *mut usize,
) -> DlStatus {
    guard(|| {
        let ckpt = &model.as_ref().ok_or_else(|| invalid("model is NULL"))?.inner;
        let m = &ckpt.model;
        if tokens.is_null() || len != m.seq_len() {
            return Err(invalid(&format!("tokens must have exactly {} slots", m.seq_len())));
        }
        let family = match sampler {
            DlSampler::DlSamplerAr => SamplerFamily::Ar,
            DlSampler::DlSamplerAncestralMasked => SamplerFamily::AncestralMasked,
            DlSampler::DlSamplerAncestralUniform => SamplerFamily::AncestralUniform,
            DlSampler::DlSamplerEsoBlock => SamplerFamily::EsoBlock,
        };
        let mut cfg = SamplerConfig::new(family).with_steps(steps);
        cfg.schedule = Some(ckpt.schedule);
        if family == SamplerFamily::EsoBlock {
            cfg.block_spacing = Some(if block_spacing == 0 { len } else { block_spacing });
        }
        let trace = lib(generate(m, &cfg, &mut RngStream::new(seed)))?;
        std::slice::from_raw_parts_mut(tokens, len).copy_from_slice(trace.sample.tokens());
        if let Some(p) = nfe.as_mut() {
            *p = trace.nfe;
        }
        Ok(())
    })
}

/// Quadratic fit of log loss against log parameter count at one budget.
///
/// # Safety
/// `params` and `losses` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dl_fit_isoflop(params: *const f64, losses: *const f64, n: usize, out: *mut DlIsoFit) -> DlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| invalid("out is NULL"))?;
        let records: Vec<SweepRecord> = slice(params, n, "params")?
            .iter()
            .zip(slice(losses, n, "losses")?)
            .map(|(&p, &l)| SweepRecord {
                family: String::new(),
                flops: 1.0,
                params: p,
                tokens: 1.0,
                val_loss: l,
            })
            .collect();
        let f = lib(fit_isoflop(&records))?;
        *out = DlIsoFit {
            a: f.a,
            b: f.b,
            c: f.c,
            interior: f.interior as i32,
            n_star: f.n_star.unwrap_or(f64::NAN),
            loss_star: f.loss_star.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Log–log least-squares power law `y = exp(intercept) · x^exponent`.
///
/// # Safety
/// `x` and `y` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dl_fit_power_law(x: *const f64, y: *const f64, n: usize, out: *mut DlPowerLaw) -> DlStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| invalid("out is NULL"))?;
        let pts: Vec<(f64, f64)> = slice(x, n, "x")?.iter().copied().zip(slice(y, n, "y")?.iter().copied()).collect();
        let f = lib(fit_power_law(&pts))?;
        *out = DlPowerLaw {
            exponent: f.exponent,
            intercept: f.intercept,
            residual_sum: f.residual_sum,
        };
        Ok(())
    })
}

/// Steps at which `alpha + beta · T^gamma` reaches `target`;
/// `DL_UNREACHABLE` when the target lies beyond the asymptote.
///
/// # Safety
/// `steps` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dl_invert_quality(alpha: f64, beta: f64, gamma: f64, target: f64, steps: *mut f64) -> DlStatus {
    guard(|| {
        let out = steps.as_mut().ok_or_else(|| invalid("steps is NULL"))?;
        let curve = Curve {
            alpha,
            beta,
            gamma,
            residual_sum: 0.0,
        };
        match invert_quality_for_steps(&curve, target) {
            StepsForTarget::Steps(t) => {
                *out = t;
                Ok(())
            }
            StepsForTarget::Unreachable => Err((
                DlStatus::DlUnreachable,
                format!("target {target} is not reachable (asymptote {alpha})"),
            )),
        }
    })
}
