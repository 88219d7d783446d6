//! C ABI over the metric-graph spectral library: opaque handles, integer
//! status codes, and a thread-local error message. Every function is
//! panic-safe; a caught panic reports `QG_STATUS_INTERNAL`.

use qgraph::boundary::BoundaryConditions;
use qgraph::config::{ConfigError, ExperimentConfig};
use qgraph::graph::MetricGraph;
use qgraph::scattering::ScatteringEvaluator;
use qgraph::spectrum::{compute_spectrum, zero_modes, SolverOptions, Spectrum};
use qgraph::traceformula::{evaluate_tf, heat_trace, TestFunction};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum QgStatus {
    /// Success.
    QG_STATUS_OK = 0,
    /// A pointer argument was null or an index was out of range.
    QG_STATUS_INVALID_ARGUMENT = 1,
    /// The configuration string is not valid JSON or violates the schema.
    QG_STATUS_PARSE_ERROR = 2,
    /// The configuration parsed but describes no self-adjoint operator.
    QG_STATUS_VALIDATION_ERROR = 3,
    /// A solver or quadrature stage failed; see qg_last_error_message.
    QG_STATUS_COMPUTE_ERROR = 4,
    /// A panic was caught at the ABI boundary.
    QG_STATUS_INTERNAL = 5,
}

use QgStatus::*;

/// Test-function family for trace-identity evaluation.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum QgTestFunction {
    /// `h(k) = exp(-k^2 t)`; `param` is `t`.
    QG_TEST_FUNCTION_GAUSSIAN = 0,
    /// `h(k) = 1/(k^2 + a^2)`; `param` is `a`.
    QG_TEST_FUNCTION_CAUCHY = 1,
}

/// A metric graph with self-adjoint boundary conditions and its scattering
/// data. Created by `qg_system_from_json`, released by `qg_system_free`.
pub struct QgSystem {
    graph: MetricGraph,
    #[allow(dead_code)]
    bc: BoundaryConditions,
    ev: ScatteringEvaluator,
}

/// A computed spectrum. Created by `qg_spectrum_compute`, released by
/// `qg_spectrum_free`.
pub struct QgSpectrum {
    inner: Spectrum,
}

/// Residuals and side values of one trace-identity evaluation.
#[repr(C)]
pub struct QgTraceResult {
    /// Spectral side.
    pub lhs: f64,
    /// Geometric side.
    pub rhs: f64,
    /// `|lhs - rhs|`.
    pub residual: f64,
    /// 1 when the absolutely convergent grouping applied, 0 otherwise.
    pub absolutely_convergent: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap();
    });
}

fn config_status(e: &ConfigError) -> QgStatus {
    if e.is_validation() {
        QG_STATUS_VALIDATION_ERROR
    } else {
        QG_STATUS_PARSE_ERROR
    }
}

fn guarded<F: FnOnce() -> QgStatus>(f: F) -> QgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic at the ABI boundary");
            QG_STATUS_INTERNAL
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; never freed by
/// the caller.
#[no_mangle]
pub extern "C" fn qg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a system from a JSON experiment description (same schema as the
/// CLI's --config file). On success writes a handle to `out`.
///
/// # Safety
/// `config_json` must point to a NUL-terminated string; `out` must be a
/// valid pointer. The returned handle must be released with
/// `qg_system_free` exactly once.
#[no_mangle]
pub unsafe extern "C" fn qg_system_from_json(
    config_json: *const c_char,
    out: *mut *mut QgSystem,
) -> QgStatus {
    if config_json.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let text = match CStr::from_ptr(config_json).to_str() {
        Ok(t) => t.to_owned(),
        Err(_) => {
            set_error("config string is not valid UTF-8");
            return QG_STATUS_INVALID_ARGUMENT;
        }
    };
    guarded(|| {
        let cfg = match ExperimentConfig::from_str(&text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return config_status(&e);
            }
        };
        let (graph, bc) = match cfg.build() {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return config_status(&e);
            }
        };
        let ev = match ScatteringEvaluator::new(&graph, &bc) {
            Ok(ev) => ev,
            Err(e) => {
                set_error(&e.to_string());
                return QG_STATUS_VALIDATION_ERROR;
            }
        };
        *out = Box::into_raw(Box::new(QgSystem { graph, bc, ev }));
        QG_STATUS_OK
    })
}

/// Release a system handle. Passing null is a no-op.
///
/// # Safety
/// `sys` must be a handle from `qg_system_from_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qg_system_free(sys: *mut QgSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Compute the full spectrum up to `k_max` (pass 0 or a negative value
/// for the default cutoff of 50).
///
/// # Safety
/// `sys` must be a live system handle; `out` must be valid. The returned
/// handle must be released with `qg_spectrum_free` exactly once.
#[no_mangle]
pub unsafe extern "C" fn qg_spectrum_compute(
    sys: *const QgSystem,
    k_max: f64,
    out: *mut *mut QgSpectrum,
) -> QgStatus {
    if sys.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let sys = &*sys;
    guarded(|| {
        let opts = SolverOptions {
            k_max: if k_max > 0.0 {
                k_max
            } else {
                qgraph::config::DEFAULT_K_MAX
            },
            ..SolverOptions::default()
        };
        match compute_spectrum(&sys.graph, &sys.ev, &opts) {
            Ok(spectrum) => {
                *out = Box::into_raw(Box::new(QgSpectrum { inner: spectrum }));
                QG_STATUS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                QG_STATUS_COMPUTE_ERROR
            }
        }
    })
}

/// Release a spectrum handle. Passing null is a no-op.
///
/// # Safety
/// `spec` must be a handle from `qg_spectrum_compute` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qg_spectrum_free(spec: *mut QgSpectrum) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Eigenvalue counts: distinct negative roots, zero-mode multiplicity,
/// and distinct positive roots. Null out-pointers are skipped.
///
/// # Safety
/// `spec` must be a live spectrum handle; non-null out-pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qg_spectrum_counts(
    spec: *const QgSpectrum,
    n_negative: *mut usize,
    g0: *mut usize,
    n_positive: *mut usize,
) -> QgStatus {
    if spec.is_null() {
        set_error("null spectrum handle");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let s = &(*spec).inner;
    if !n_negative.is_null() {
        *n_negative = s.negative.len();
    }
    if !g0.is_null() {
        *g0 = s.zero.g0;
    }
    if !n_positive.is_null() {
        *n_positive = s.positive.len();
    }
    QG_STATUS_OK
}

/// Positive eigenvalue root `k` and multiplicity at `index` (ascending).
///
/// # Safety
/// `spec` must be a live spectrum handle; non-null out-pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qg_spectrum_positive(
    spec: *const QgSpectrum,
    index: usize,
    k: *mut f64,
    multiplicity: *mut usize,
) -> QgStatus {
    if spec.is_null() {
        set_error("null spectrum handle");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let s = &(*spec).inner;
    let Some(pe) = s.positive.get(index) else {
        set_error("positive eigenvalue index out of range");
        return QG_STATUS_INVALID_ARGUMENT;
    };
    if !k.is_null() {
        *k = pe.k;
    }
    if !multiplicity.is_null() {
        *multiplicity = pe.multiplicity;
    }
    QG_STATUS_OK
}

/// Negative eigenvalue `-kappa^2`: root `kappa` and multiplicity at
/// `index` (ascending kappa).
///
/// # Safety
/// `spec` must be a live spectrum handle; non-null out-pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qg_spectrum_negative(
    spec: *const QgSpectrum,
    index: usize,
    kappa: *mut f64,
    multiplicity: *mut usize,
) -> QgStatus {
    if spec.is_null() {
        set_error("null spectrum handle");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let s = &(*spec).inner;
    let Some(ne) = s.negative.get(index) else {
        set_error("negative eigenvalue index out of range");
        return QG_STATUS_INVALID_ARGUMENT;
    };
    if !kappa.is_null() {
        *kappa = ne.kappa;
    }
    if !multiplicity.is_null() {
        *multiplicity = ne.multiplicity;
    }
    QG_STATUS_OK
}

/// Zero-mode data: `g0` is the multiplicity of the eigenvalue zero, `n`
/// the multiplicity of the eigenvalue one of the unitary evolution at
/// k = 0.
///
/// # Safety
/// `sys` must be a live system handle; non-null out-pointers must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qg_zero_modes(
    sys: *const QgSystem,
    g0: *mut usize,
    n: *mut usize,
) -> QgStatus {
    if sys.is_null() {
        set_error("null system handle");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let sys = &*sys;
    guarded(|| match zero_modes(&sys.graph, &sys.ev) {
        Ok(zm) => {
            if !g0.is_null() {
                *g0 = zm.g0;
            }
            if !n.is_null() {
                *n = zm.n_secular;
            }
            QG_STATUS_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            QG_STATUS_COMPUTE_ERROR
        }
    })
}

/// Evaluate the trace identity for the given test function against a
/// computed spectrum, truncating the orbit sum at topological length
/// `n_max`.
///
/// # Safety
/// `sys` and `spec` must be live handles from this library; `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qg_trace_verify(
    sys: *const QgSystem,
    spec: *const QgSpectrum,
    test_function: QgTestFunction,
    param: f64,
    n_max: usize,
    out: *mut QgTraceResult,
) -> QgStatus {
    if sys.is_null() || spec.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    if !param.is_finite() || param <= 0.0 {
        set_error("test-function parameter must be positive and finite");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let sys = &*sys;
    let spec = &(*spec).inner;
    guarded(|| {
        let h = match test_function {
            QgTestFunction::QG_TEST_FUNCTION_GAUSSIAN => TestFunction::Gaussian { t: param },
            QgTestFunction::QG_TEST_FUNCTION_CAUCHY => TestFunction::Cauchy { a: param },
        };
        match evaluate_tf(&sys.graph, &sys.ev, spec, &h, n_max) {
            Ok(r) => {
                *out = QgTraceResult {
                    lhs: r.lhs,
                    rhs: r.rhs,
                    residual: r.residual,
                    absolutely_convergent: i32::from(r.identity == "TF2"),
                };
                QG_STATUS_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                QG_STATUS_COMPUTE_ERROR
            }
        }
    })
}

/// Evaluate the heat-trace identity at time `t` against a computed
/// spectrum.
///
/// # Safety
/// `sys` and `spec` must be live handles from this library; `out` must be
/// valid.
#[no_mangle]
pub unsafe extern "C" fn qg_heat_verify(
    sys: *const QgSystem,
    spec: *const QgSpectrum,
    t: f64,
    n_max: usize,
    out: *mut QgTraceResult,
) -> QgStatus {
    if sys.is_null() || spec.is_null() || out.is_null() {
        set_error("null pointer argument");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    if !t.is_finite() || t <= 0.0 {
        set_error("time parameter must be positive and finite");
        return QG_STATUS_INVALID_ARGUMENT;
    }
    let sys = &*sys;
    let spec = &(*spec).inner;
    guarded(|| match heat_trace(&sys.graph, &sys.ev, spec, t, n_max) {
        Ok(r) => {
            *out = QgTraceResult {
                lhs: r.lhs,
                rhs: r.rhs,
                residual: r.residual,
                absolutely_convergent: i32::from(r.convergence.orbit_window_satisfied),
            };
            QG_STATUS_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            QG_STATUS_COMPUTE_ERROR
        }
    })
}
