//! C ABI over the simulator: opaque handles, integer status codes and a
//! per-thread last-error message.
//!
//! Every function returns a [`ColdfedStatus`]; on failure the reason is
//! available from [`coldfed_last_error`] until the next call on the same
//! thread. Handles are freed with their matching `_free` function; passing
//! NULL to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use coldfed::cli;
use coldfed::config::RunConfig;
use coldfed::diffusion::InferenceMode;
use coldfed::eval::evaluate_cold;
use coldfed::fedsim::Simulator;
use coldfed::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColdfedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    Checkpoint = 6,
    Data = 7,
    /// A Rust panic was caught at the boundary.
    Internal = 99,
}

/// Parsed run configuration.
pub struct ColdfedConfig {
    inner: RunConfig,
}

/// A federation in memory, advanced one round at a time.
pub struct ColdfedSimulator {
    sim: Simulator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> ColdfedStatus {
    match e {
        Error::Config(_) | Error::Parse { .. } => ColdfedStatus::Config,
        Error::Io { .. } => ColdfedStatus::Io,
        Error::NonFinite(_) | Error::Numerical(_) => ColdfedStatus::Numerical,
        Error::Checkpoint(_) => ColdfedStatus::Checkpoint,
        Error::Dimension(_) | Error::MissingFeatures(_) | Error::Insufficient(_) => ColdfedStatus::Data,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (ColdfedStatus, String)>) -> ColdfedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ColdfedStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ColdfedStatus::Internal
        }
    }
}

fn lift<T>(r: coldfed::Result<T>) -> Result<T, (ColdfedStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (ColdfedStatus, String) {
    (ColdfedStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ColdfedStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ColdfedStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// The message for the last failed call on this thread, or NULL.
#[no_mangle]
pub extern "C" fn coldfed_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Parses `key = value` config text into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldfed_config_parse(text: *const c_char, out: *mut *mut ColdfedConfig) -> ColdfedStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(text, "text")?;
        let inner = lift(RunConfig::parse_str(text, "<ffi>"))?;
        *out = Box::into_raw(Box::new(ColdfedConfig { inner }));
        Ok(())
    })
}

/// Overrides the root seed (and the generator seed tied to it).
///
/// # Safety
/// `config` must come from `coldfed_config_parse`.
#[no_mangle]
pub unsafe extern "C" fn coldfed_config_set_seed(config: *mut ColdfedConfig, seed: u64) -> ColdfedStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.inner.seed = seed;
        c.inner.sync_seed();
        Ok(())
    })
}

/// Overrides the output directory.
///
/// # Safety
/// `config` must come from `coldfed_config_parse`; `dir` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn coldfed_config_set_out(config: *mut ColdfedConfig, dir: *const c_char) -> ColdfedStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.inner.out = str_arg(dir, "dir")?.into();
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or come from `coldfed_config_parse`, and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn coldfed_config_free(config: *mut ColdfedConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs one CLI command (`gen-data`, `train`, `infer`, `eval`, `attack`,
/// `sweep`), writing its files under the configured output directory.
///
/// # Safety
/// `config` must come from `coldfed_config_parse`; `command` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn coldfed_run_command(config: *const ColdfedConfig, command: *const c_char) -> ColdfedStatus {
    guard(|| {
        let cfg = &config.as_ref().ok_or_else(|| null("config"))?.inner;
        match str_arg(command, "command")? {
            "gen-data" => lift(cli::cmd_gen_data(cfg)).map(drop),
            "train" => lift(cli::cmd_train(cfg)).map(drop),
            "infer" => lift(cli::cmd_infer(cfg)).map(drop),
            "eval" => lift(cli::cmd_eval(cfg)).map(drop),
            "attack" => lift(cli::cmd_attack(cfg)).map(drop),
            "sweep" => lift(cli::cmd_sweep(cfg)).map(drop),
            other => Err((ColdfedStatus::InvalidArgument, format!("unknown command `{other}`"))),
        }
    })
}

/// Loads the configured data and builds a simulator at round 0.
///
/// # Safety
/// `config` must come from `coldfed_config_parse`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldfed_simulator_new(
    config: *const ColdfedConfig,
    out: *mut *mut ColdfedSimulator,
) -> ColdfedStatus {
    guard(|| {
        let cfg = &config.as_ref().ok_or_else(|| null("config"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let ws = lift(cli::prepare(cfg))?;
        let sim = lift(Simulator::new(
            ws.split,
            &ws.features,
            cfg.guidance,
            cfg.fed.clone(),
            cfg.diffusion.clone(),
            cfg.seed,
        ))?;
        *out = Box::into_raw(Box::new(ColdfedSimulator { sim }));
        Ok(())
    })
}

/// # Safety
/// `sim` must be NULL or come from `coldfed_simulator_new`, and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn coldfed_simulator_free(sim: *mut ColdfedSimulator) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Runs one round; writes the mean client loss if `mean_client_loss` is not
/// NULL.
///
/// # Safety
/// `sim` must come from `coldfed_simulator_new`.
#[no_mangle]
pub unsafe extern "C" fn coldfed_simulator_run_round(
    sim: *mut ColdfedSimulator,
    mean_client_loss: *mut f64,
) -> ColdfedStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        let r = lift(s.sim.run_round())?;
        if !mean_client_loss.is_null() {
            *mean_client_loss = r.mean_client_loss;
        }
        Ok(())
    })
}

/// Completed rounds, cold-item count and embedding width.
///
/// # Safety
/// `sim` must come from `coldfed_simulator_new`; each out pointer may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn coldfed_simulator_info(
    sim: *const ColdfedSimulator,
    rounds: *mut usize,
    cold_items: *mut usize,
    dim: *mut usize,
) -> ColdfedStatus {
    guard(|| {
        let s = &sim.as_ref().ok_or_else(|| null("sim"))?.sim;
        if !rounds.is_null() {
            *rounds = s.round();
        }
        if !cold_items.is_null() {
            *cold_items = s.split().cold_items.len();
        }
        if !dim.is_null() {
            *dim = s.config().dim;
        }
        Ok(())
    })
}

/// Generates the cold items' embeddings into `out`, row-major, in ascending
/// item order. `len` must equal cold items × dim.
///
/// # Safety
/// `sim` must come from `coldfed_simulator_new`; `out` must point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn coldfed_simulator_generate_cold(
    sim: *const ColdfedSimulator,
    stochastic: bool,
    out: *mut f64,
    len: usize,
) -> ColdfedStatus {
    guard(|| {
        let s = &sim.as_ref().ok_or_else(|| null("sim"))?.sim;
        if out.is_null() {
            return Err(null("out"));
        }
        let cold = s.split().cold_items.clone();
        let need = cold.len() * s.config().dim;
        if len != need {
            return Err((ColdfedStatus::InvalidArgument, format!("buffer holds {len} doubles, need {need}")));
        }
        let mode = if stochastic {
            InferenceMode::Stochastic
        } else {
            InferenceMode::DeterministicMean
        };
        let m = lift(s.generate(&cold, mode))?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// Cold-start recall@k with deterministically generated cold embeddings.
///
/// # Safety
/// `sim` must come from `coldfed_simulator_new`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldfed_simulator_cold_recall(
    sim: *const ColdfedSimulator,
    k: usize,
    out: *mut f64,
) -> ColdfedStatus {
    guard(|| {
        let s = &sim.as_ref().ok_or_else(|| null("sim"))?.sim;
        if out.is_null() {
            return Err(null("out"));
        }
        if k == 0 {
            return Err((ColdfedStatus::InvalidArgument, "k must be positive".into()));
        }
        let cold = s.split().cold_items.clone();
        let e = lift(s.table_with_generated(&cold, InferenceMode::DeterministicMean))?;
        let report = lift(evaluate_cold(s.split(), &s.user_embeddings(), &e, &[k]))?;
        *out = report.recall_at(k);
        Ok(())
    })
}
