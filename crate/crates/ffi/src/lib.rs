//! C ABI over the `bdsde` crate.
//!
//! Problems and reports are opaque heap handles owned by the caller and
//! released with the matching `_free` function. Every entry point returns a
//! [`BdsdeStatus`]; on failure a human-readable message is kept per thread
//! and can be read with [`bdsde_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bdsde::experiment::{convergence_study, ConvergenceReport, Metric, StudyConfig};
use bdsde::model::{self, FamilyParams, MilsteinForm, Problem};
use bdsde::solver::{SchemeSettings, TerminalZ};
use bdsde::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BdsdeStatus {
    Ok = 0,
    InvalidArgument = 1,
    NonFinite = 2,
    Solver = 3,
    Sample = 4,
    Config = 5,
    Io = 6,
    NullPointer = 7,
    Panic = 8,
}

pub const BDSDE_METRIC_POINT_AT_X0: u32 = 0;
pub const BDSDE_METRIC_GRID_L2: u32 = 1;
pub const BDSDE_MILSTEIN_COMPLETE: u32 = 0;
pub const BDSDE_MILSTEIN_Y_ONLY: u32 = 1;
pub const BDSDE_TERMINAL_Z_FINITE_DIFFERENCE: u32 = 0;
pub const BDSDE_TERMINAL_Z_EXACT: u32 = 1;

/// Parameters of the built-in problem families.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BdsdeFamilyParams {
    pub horizon: f64,
    pub x0: f64,
    pub slope: f64,
    pub intercept: f64,
    pub noise: f64,
}

/// Study settings. `grid_radius <= 0` selects the default radius.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BdsdeStudyConfig {
    pub samples: usize,
    pub seed: u64,
    pub gh_order: usize,
    pub grid_count: usize,
    pub grid_radius: f64,
    /// One of the `BDSDE_METRIC_*` constants.
    pub metric: u32,
    /// One of the `BDSDE_MILSTEIN_*` constants.
    pub milstein: u32,
    /// One of the `BDSDE_TERMINAL_Z_*` constants.
    pub terminal_z: u32,
}

/// Errors at one time-step count. `n` is the number of steps.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BdsdeLevelErrors {
    pub n: usize,
    pub dt: f64,
    pub err_y_tilde: f64,
    pub err_y: f64,
    pub err_z: f64,
}

/// Fitted rates; NaN when a rate is undefined.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BdsdeRates {
    pub y_tilde: f64,
    pub y: f64,
    pub z: f64,
}

/// Opaque problem handle.
pub struct BdsdeProblem {
    inner: Problem,
}

/// Opaque convergence report handle.
pub struct BdsdeReport {
    inner: ConvergenceReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> BdsdeStatus {
    match e {
        Error::InvalidArgument(_) => BdsdeStatus::InvalidArgument,
        Error::NonFinite { .. } => BdsdeStatus::NonFinite,
        Error::Solver { .. } => BdsdeStatus::Solver,
        Error::Sample { .. } => BdsdeStatus::Sample,
        Error::Config { .. } => BdsdeStatus::Config,
        Error::Io(_) => BdsdeStatus::Io,
    }
}

enum Fail {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> BdsdeStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BdsdeStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BdsdeStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BdsdeStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn study_config(c: &BdsdeStudyConfig) -> Result<StudyConfig, Error> {
    let metric = match c.metric {
        BDSDE_METRIC_POINT_AT_X0 => Metric::PointAtX0,
        BDSDE_METRIC_GRID_L2 => Metric::GridL2,
        m => return Err(Error::InvalidArgument(format!("unknown metric {m}"))),
    };
    let milstein = match c.milstein {
        BDSDE_MILSTEIN_COMPLETE => MilsteinForm::Complete,
        BDSDE_MILSTEIN_Y_ONLY => MilsteinForm::YOnly,
        m => return Err(Error::InvalidArgument(format!("unknown milstein form {m}"))),
    };
    let terminal_z = match c.terminal_z {
        BDSDE_TERMINAL_Z_FINITE_DIFFERENCE => TerminalZ::FiniteDifference,
        BDSDE_TERMINAL_Z_EXACT => TerminalZ::Exact,
        m => {
            return Err(Error::InvalidArgument(format!(
                "unknown terminal z mode {m}"
            )))
        }
    };
    Ok(StudyConfig {
        samples: c.samples,
        seed: c.seed,
        metric,
        gh_order: c.gh_order,
        grid_count: c.grid_count,
        grid_radius: (c.grid_radius > 0.0).then_some(c.grid_radius),
        scheme: SchemeSettings {
            terminal_z,
            milstein,
        },
    })
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bdsde_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default family parameters: horizon 1, x0 0, slope 1, intercept 0, noise 0.
#[no_mangle]
pub extern "C" fn bdsde_family_params_default() -> BdsdeFamilyParams {
    let p = FamilyParams::default();
    BdsdeFamilyParams {
        horizon: p.horizon,
        x0: p.x0,
        slope: p.slope,
        intercept: p.intercept,
        noise: p.noise,
    }
}

/// Default study settings: 300 samples, seed 42, 8 Gauss-Hermite nodes,
/// 257 grid nodes, default radius.
#[no_mangle]
pub extern "C" fn bdsde_study_config_default() -> BdsdeStudyConfig {
    let c = StudyConfig::default();
    BdsdeStudyConfig {
        samples: c.samples,
        seed: c.seed,
        gh_order: c.gh_order,
        grid_count: c.grid_count,
        grid_radius: c.grid_radius.unwrap_or(0.0),
        metric: BDSDE_METRIC_POINT_AT_X0,
        milstein: BDSDE_MILSTEIN_COMPLETE,
        terminal_z: BDSDE_TERMINAL_Z_FINITE_DIFFERENCE,
    }
}

/// Builds a named problem. `params` may be null for the defaults.
///
/// # Safety
/// `name` must be a NUL-terminated string, `params` null or valid, and
/// `out_problem` a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn bdsde_problem_new(
    name: *const c_char,
    params: *const BdsdeFamilyParams,
    out_problem: *mut *mut BdsdeProblem,
) -> BdsdeStatus {
    guard(|| {
        let slot = out(out_problem, "out_problem")?;
        *slot = ptr::null_mut();
        if name.is_null() {
            return Err(Fail::Null("name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Error::InvalidArgument("problem name is not UTF-8".into()))?;
        let p = match params.as_ref() {
            None => FamilyParams::default(),
            Some(p) => FamilyParams {
                horizon: p.horizon,
                x0: p.x0,
                slope: p.slope,
                intercept: p.intercept,
                noise: p.noise,
            },
        };
        let inner = model::by_name(name, &p)?;
        *slot = Box::into_raw(Box::new(BdsdeProblem { inner }));
        Ok(())
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `problem` must come from [`bdsde_problem_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bdsde_problem_free(problem: *mut BdsdeProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Runs a convergence study over `n_len` step counts.
///
/// # Safety
/// `problem` must be a live handle, `n_list` must point to `n_len` values,
/// `config` null (defaults) or valid, and `out_report` writable.
#[no_mangle]
pub unsafe extern "C" fn bdsde_convergence_study(
    problem: *const BdsdeProblem,
    n_list: *const usize,
    n_len: usize,
    config: *const BdsdeStudyConfig,
    out_report: *mut *mut BdsdeReport,
) -> BdsdeStatus {
    guard(|| {
        let slot = out(out_report, "out_report")?;
        *slot = ptr::null_mut();
        let problem = deref(problem, "problem")?;
        if n_list.is_null() && n_len > 0 {
            return Err(Fail::Null("n_list"));
        }
        let ns: &[usize] = if n_len == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(n_list, n_len)
        };
        let config = match config.as_ref() {
            None => StudyConfig::default(),
            Some(c) => study_config(c)?,
        };
        let inner = convergence_study(&problem.inner, ns, &config)?;
        *slot = Box::into_raw(Box::new(BdsdeReport { inner }));
        Ok(())
    })
}

/// Number of step counts in a report; 0 for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bdsde_report_level_count(report: *const BdsdeReport) -> usize {
    report.as_ref().map_or(0, |r| r.inner.levels.len())
}

/// Copies the errors at position `index` into `out_level`.
///
/// # Safety
/// `report` must be a live handle and `out_level` writable.
#[no_mangle]
pub unsafe extern "C" fn bdsde_report_level(
    report: *const BdsdeReport,
    index: usize,
    out_level: *mut BdsdeLevelErrors,
) -> BdsdeStatus {
    guard(|| {
        let r = deref(report, "report")?;
        let slot = out(out_level, "out_level")?;
        let l = r.inner.levels.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "level {index} out of range ({} levels)",
                r.inner.levels.len()
            ))
        })?;
        *slot = BdsdeLevelErrors {
            n: l.n,
            dt: l.dt,
            err_y_tilde: l.err_y_tilde,
            err_y: l.err_y,
            err_z: l.err_z,
        };
        Ok(())
    })
}

/// Copies the fitted rates into `out_rates`, NaN where undefined.
///
/// # Safety
/// `report` must be a live handle and `out_rates` writable.
#[no_mangle]
pub unsafe extern "C" fn bdsde_report_rates(
    report: *const BdsdeReport,
    out_rates: *mut BdsdeRates,
) -> BdsdeStatus {
    guard(|| {
        let r = &deref(report, "report")?.inner.rates;
        *out(out_rates, "out_rates")? = BdsdeRates {
            y_tilde: r.y_tilde.unwrap_or(f64::NAN),
            y: r.y.unwrap_or(f64::NAN),
            z: r.z.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Renders the report as CSV. Release the string with [`bdsde_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out_csv` writable.
#[no_mangle]
pub unsafe extern "C" fn bdsde_report_csv(
    report: *const BdsdeReport,
    out_csv: *mut *mut c_char,
) -> BdsdeStatus {
    guard(|| {
        let slot = out(out_csv, "out_csv")?;
        *slot = ptr::null_mut();
        let r = deref(report, "report")?;
        let csv = CString::new(r.inner.to_csv())
            .map_err(|_| Error::InvalidArgument("csv contains NUL".into()))?;
        *slot = csv.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bdsde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from [`bdsde_convergence_study`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bdsde_report_free(report: *mut BdsdeReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
