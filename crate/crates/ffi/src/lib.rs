//! C interface to `dtrbal`.
//!
//! Every function returns a [`DtrbalStatus`]. On failure the message is
//! available from [`dtrbal_last_error`] on the same thread until the next call.
//! Datasets are opaque handles owned by the caller and released with
//! [`dtrbal_dataset_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dtrbal::estimators::{evaluate, EstimatorKind, EstimatorSpec};
use dtrbal::harness::{summarize, NamedPolicy};
use dtrbal::kernels::{KernelFamily, KernelSpec};
use dtrbal::qp::{solve_qp, QpProblem, QpStatus};
use dtrbal::simulation::{rollout_value, sample_dataset, DgpConfig, ReferenceLogging, ACTION_LABELS};
use dtrbal::trajectories::{read_csv, CsvOptions, Dataset};
use dtrbal::Error;
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtrbalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Positivity = 3,
    Numeric = 4,
    InvalidState = 5,
    Parse = 6,
    Io = 7,
    Config = 8,
    /// The QP stopped at its iteration budget; outputs hold the best iterate.
    NotConverged = 9,
    Panic = 10,
}

/// A trajectory dataset.
pub struct DtrbalDataset {
    inner: Dataset,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DtrbalStats {
    pub rmse: f64,
    pub bias: f64,
    pub sd: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DtrbalStatus {
    match e {
        Error::InvalidArgument(_) => DtrbalStatus::InvalidArgument,
        Error::PositivityViolation { .. } => DtrbalStatus::Positivity,
        Error::Numeric { .. } => DtrbalStatus::Numeric,
        Error::InvalidState(_) => DtrbalStatus::InvalidState,
        Error::Parse { .. } => DtrbalStatus::Parse,
        Error::Io { .. } => DtrbalStatus::Io,
        Error::Config(_) => DtrbalStatus::Config,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DtrbalStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DtrbalStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DtrbalStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::NotConverged(msg))) => {
            set_error(msg);
            DtrbalStatus::NotConverged
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DtrbalStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass either null or a pointer to writable storage.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next `dtrbal_*` call on the same thread.
#[no_mangle]
pub extern "C" fn dtrbal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a trajectory CSV (`traj_id,t,x_1..x_d,action,reward`) whose actions
/// are labelled -1 and 1.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_dataset_read_csv(
    path: *const c_char,
    out_dataset: *mut *mut DtrbalDataset,
) -> DtrbalStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let path = text(path, "path")?;
        let opts = CsvOptions {
            action_set: Some(ACTION_LABELS.to_vec()),
            ..CsvOptions::default()
        };
        let inner = read_csv(path, &opts)?;
        *slot = Box::into_raw(Box::new(DtrbalDataset { inner }));
        Ok(())
    })
}

/// Samples `n` trajectories of length `horizon` from the reference process.
///
/// # Safety
/// `out_dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_dataset_simulate(
    horizon: usize,
    n: usize,
    seed: u64,
    out_dataset: *mut *mut DtrbalDataset,
) -> DtrbalStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let inner = sample_dataset(&DgpConfig::default().with_horizon(horizon).with_n(n), seed)?;
        *slot = Box::into_raw(Box::new(DtrbalDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_dataset_free(dataset: *mut DtrbalDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of trajectories, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_dataset_len(dataset: *const DtrbalDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of decision steps, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_dataset_horizon(dataset: *const DtrbalDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.horizon())
}

/// Estimates the value of `target` (`reference`, `logging`, `uniform` or
/// `constant:<label>`) with one estimator (`ipw`, `ipw_T`, `nipw`, `nipw_T`,
/// `balanced`, `balanced_dr`). `kernel` (`gaussian` or `matern52`) and
/// `lambda` are used by the balanced estimators only; the IPW family assumes
/// the reference logging policy with the given slope.
///
/// # Safety
/// `dataset` must be a live handle, strings NUL-terminated, `out_value`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_evaluate(
    dataset: *const DtrbalDataset,
    estimator: *const c_char,
    kernel: *const c_char,
    lambda: f64,
    target: *const c_char,
    logging_slope: f64,
    out_value: *mut f64,
) -> DtrbalStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        let ds = &dataset.as_ref().ok_or(Failure::Null("dataset"))?.inner;
        let kind: EstimatorKind = text(estimator, "estimator")?.parse()?;
        let spec = if kind.is_balanced() {
            let family: KernelFamily = text(kernel, "kernel")?.parse()?;
            let k = KernelSpec::dtr(family);
            match kind {
                EstimatorKind::BalancedDr => EstimatorSpec::balanced_dr(k, lambda),
                _ => EstimatorSpec::balanced(k, lambda),
            }
        } else {
            EstimatorSpec::new(kind)
        };
        let target: NamedPolicy = text(target, "target")?.parse()?;
        let logging = ReferenceLogging { slope: logging_slope };
        let policy = target.build(logging_slope);
        *slot = evaluate(&spec, ds, &logging, &policy)?.value;
        Ok(())
    })
}

/// Monte Carlo value of the reference target regime over `horizon` steps.
///
/// # Safety
/// `out_value` and `out_standard_error` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_oracle(
    horizon: usize,
    n_rollouts: usize,
    seed: u64,
    out_value: *mut f64,
    out_standard_error: *mut f64,
) -> DtrbalStatus {
    guard(|| {
        let value = out(out_value, "out_value")?;
        let se = out(out_standard_error, "out_standard_error")?;
        let cfg = DgpConfig::default().with_horizon(horizon);
        let o = rollout_value(&cfg, &dtrbal::simulation::ReferenceTarget, n_rollouts, seed)?;
        *value = o.value;
        *se = o.standard_error;
        Ok(())
    })
}

/// Minimizes `½ wᵀQw + qᵀw` over `{w ≥ 0, Σw = sum_target}`. `hessian` is
/// `n × n` row-major, `linear` and `out_w` have length `n`.
///
/// # Safety
/// Array arguments must point to the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_solve_qp(
    n: usize,
    hessian: *const f64,
    linear: *const f64,
    sum_target: f64,
    out_w: *mut f64,
    out_objective: *mut f64,
) -> DtrbalStatus {
    guard(|| {
        if hessian.is_null() {
            return Err(Failure::Null("hessian"));
        }
        if linear.is_null() {
            return Err(Failure::Null("linear"));
        }
        if out_w.is_null() {
            return Err(Failure::Null("out_w"));
        }
        let objective = out(out_objective, "out_objective")?;
        let h = std::slice::from_raw_parts(hessian, n * n);
        let q = std::slice::from_raw_parts(linear, n).to_vec();
        let p = QpProblem::new(DMatrix::from_row_slice(n, n, h), q, sum_target);
        let sol = solve_qp(&p)?;
        std::slice::from_raw_parts_mut(out_w, n).copy_from_slice(&sol.w);
        *objective = sol.objective;
        if sol.status == QpStatus::MaxIters {
            return Err(Failure::NotConverged(format!(
                "iteration budget exhausted after {} iterations (KKT residual {:e})",
                sol.iterations, sol.kkt_residual
            )));
        }
        Ok(())
    })
}

/// RMSE, bias and population SD of `len` estimates around `truth`.
///
/// # Safety
/// `estimates` must point to `len` values; `out_stats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dtrbal_summarize(
    estimates: *const f64,
    len: usize,
    truth: f64,
    out_stats: *mut DtrbalStats,
) -> DtrbalStatus {
    guard(|| {
        let slot = out(out_stats, "out_stats")?;
        if estimates.is_null() {
            return Err(Failure::Null("estimates"));
        }
        let s = summarize(std::slice::from_raw_parts(estimates, len), truth)?;
        *slot = DtrbalStats {
            rmse: s.rmse,
            bias: s.bias,
            sd: s.sd,
        };
        Ok(())
    })
}
