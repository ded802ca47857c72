//! C ABI for the measure-valued urn library.
//!
//! The interface follows the usual opaque-handle pattern: constructors
//! return pointers to heap-allocated handles, every fallible call returns an
//! [`MvpsStatus`] code and writes its result through out-pointers, and each
//! handle type has a matching `_free` function. A C header is generated at
//! build time into `include/mvps.h`.
//!
//! All functions are panic-safe: unexpected panics are caught at the
//! boundary and reported as [`MvpsStatus::Panic`] instead of unwinding into
//! foreign frames.

use std::ffi::CStr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use mvps::exactlaw::{check_cid, check_exchangeable};
use mvps::kernel::{check_balanced, CheckReport, FiniteKernel};
use mvps::measure::{FiniteMeasure, Space};
use mvps::prior::truncation_level;
use mvps::urn::{simulate, UrnSpec, UrnState};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvpsStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was rejected (bad dimensions, negative weights, an
    /// out-of-range state index, or a non-finite parameter).
    InvalidArgument = 2,
    /// An internal invariant failed; the out-parameters are untouched.
    Panic = 3,
}

/// Opaque handle to a finite reinforced-urn model: a concentration
/// parameter, a base probability vector, and a reinforcement matrix.
pub struct MvpsSpec {
    spec: Arc<UrnSpec>,
}

/// Opaque handle to the outcome of a structural or enumeration check.
pub struct MvpsReport {
    report: CheckReport,
}

fn guarded<F: FnOnce() -> MvpsStatus>(body: F) -> MvpsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => MvpsStatus::Panic,
    }
}

/// Builds a model over `k` states labeled `"1"` through `"k"`.
///
/// `nu` must point to `k` non-negative weights with a positive sum (they
/// are normalized); `matrix` must point to `k * k` row-major non-negative
/// reinforcement entries. On success `*out` owns the new handle and must be
/// released with [`mvps_spec_free`].
///
/// # Safety
/// `nu` and `matrix` must be readable for `k` and `k * k` doubles, and
/// `out` must be a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mvps_spec_new(
    theta: f64,
    k: usize,
    nu: *const f64,
    matrix: *const f64,
    out: *mut *mut MvpsSpec,
) -> MvpsStatus {
    if nu.is_null() || matrix.is_null() || out.is_null() {
        return MvpsStatus::NullPointer;
    }
    if k == 0 {
        return MvpsStatus::InvalidArgument;
    }
    let weights = std::slice::from_raw_parts(nu, k).to_vec();
    let entries = std::slice::from_raw_parts(matrix, k * k);
    let rows: Vec<Vec<f64>> = entries.chunks(k).map(<[f64]>::to_vec).collect();
    guarded(|| {
        let space = match Space::new((1..=k).map(|i| i.to_string())) {
            Ok(space) => Arc::new(space),
            Err(_) => return MvpsStatus::InvalidArgument,
        };
        let base = match FiniteMeasure::new(space.clone(), weights)
            .and_then(|measure| measure.normalize())
        {
            Ok(base) => base,
            Err(_) => return MvpsStatus::InvalidArgument,
        };
        let kernel = match FiniteKernel::from_matrix(space, rows) {
            Ok(kernel) => kernel,
            Err(_) => return MvpsStatus::InvalidArgument,
        };
        let spec = match UrnSpec::new(theta, base, kernel) {
            Ok(spec) => Arc::new(spec),
            Err(_) => return MvpsStatus::InvalidArgument,
        };
        *out = Box::into_raw(Box::new(MvpsSpec { spec }));
        MvpsStatus::Ok
    })
}

/// Releases a model handle. A null pointer is ignored.
///
/// # Safety
/// `spec` must be null or a pointer returned by [`mvps_spec_new`] that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mvps_spec_free(spec: *mut MvpsSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Number of states of the model, or 0 for a null handle.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvps_spec_num_states(spec: *const MvpsSpec) -> usize {
    if spec.is_null() {
        0
    } else {
        (*spec).spec.space().len()
    }
}

/// Concentration parameter of the model, or NaN for a null handle.
///
/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvps_spec_theta(spec: *const MvpsSpec) -> f64 {
    if spec.is_null() {
        f64::NAN
    } else {
        (*spec).spec.theta()
    }
}

fn report_out(report: CheckReport, out: *mut *mut MvpsReport) -> MvpsStatus {
    unsafe {
        *out = Box::into_raw(Box::new(MvpsReport { report }));
    }
    MvpsStatus::Ok
}

/// Tests permutation invariance of the joint law of the first `depth`
/// draws, at absolute tolerance `tol`. On success `*out` owns a report
/// handle; release it with [`mvps_report_free`].
///
/// # Safety
/// `spec` must be a live handle and `out` a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mvps_check_exchangeable(
    spec: *const MvpsSpec,
    depth: usize,
    tol: f64,
    out: *mut *mut MvpsReport,
) -> MvpsStatus {
    if spec.is_null() || out.is_null() {
        return MvpsStatus::NullPointer;
    }
    let handle = &*spec;
    guarded(|| match check_exchangeable(&handle.spec, depth, tol) {
        Ok(report) => report_out(report, out),
        Err(_) => MvpsStatus::InvalidArgument,
    })
}

/// Tests the martingale identity of the predictives over every history
/// shorter than `depth`, at absolute tolerance `tol`.
///
/// # Safety
/// `spec` must be a live handle and `out` a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mvps_check_cid(
    spec: *const MvpsSpec,
    depth: usize,
    tol: f64,
    out: *mut *mut MvpsReport,
) -> MvpsStatus {
    if spec.is_null() || out.is_null() {
        return MvpsStatus::NullPointer;
    }
    let handle = &*spec;
    guarded(|| match check_cid(&handle.spec, depth, tol) {
        Ok(report) => report_out(report, out),
        Err(_) => MvpsStatus::InvalidArgument,
    })
}

/// Tests whether every row of the reinforcement matrix adds the same total
/// mass.
///
/// # Safety
/// `spec` must be a live handle and `out` a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mvps_check_balanced(
    spec: *const MvpsSpec,
    out: *mut *mut MvpsReport,
) -> MvpsStatus {
    if spec.is_null() || out.is_null() {
        return MvpsStatus::NullPointer;
    }
    let handle = &*spec;
    guarded(
        || match check_balanced(handle.spec.kernel(), handle.spec.nu()) {
            Ok(report) => report_out(report, out),
            Err(_) => MvpsStatus::InvalidArgument,
        },
    )
}

/// Whether the checked property holds: 1 for pass, 0 for fail or a null
/// handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn mvps_report_passed(report: *const MvpsReport) -> i32 {
    if report.is_null() {
        0
    } else {
        i32::from((*report).report.passed)
    }
}

/// Largest residual the check observed, or NaN for a null handle.
///
/// # Safety
/// `report` must be null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn mvps_report_max_residual(report: *const MvpsReport) -> f64 {
    if report.is_null() {
        f64::NAN
    } else {
        (*report).report.max_residual
    }
}

/// Releases a report handle. A null pointer is ignored.
///
/// # Safety
/// `report` must be null or a pointer produced by a check function that has
/// not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn mvps_report_free(report: *mut MvpsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Writes the predictive probabilities after observing `history` (state
/// indices, 0-based) into `out_probs`, which must hold one double per
/// state.
///
/// # Safety
/// `spec` must be a live handle, `history` readable for `history_len`
/// entries (or null when `history_len` is 0), and `out_probs` writable for
/// as many doubles as the model has states.
#[no_mangle]
pub unsafe extern "C" fn mvps_predictive(
    spec: *const MvpsSpec,
    history: *const usize,
    history_len: usize,
    out_probs: *mut f64,
) -> MvpsStatus {
    if spec.is_null() || out_probs.is_null() || (history.is_null() && history_len > 0) {
        return MvpsStatus::NullPointer;
    }
    let handle = &*spec;
    let steps: &[usize] = if history_len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(history, history_len)
    };
    let k = handle.spec.space().len();
    guarded(|| {
        let state = match UrnState::initial(handle.spec.clone()).step_many(steps) {
            Ok(state) => state,
            Err(_) => return MvpsStatus::InvalidArgument,
        };
        let predictive = state.predictive();
        let out = std::slice::from_raw_parts_mut(out_probs, k);
        for (x, slot) in out.iter_mut().enumerate() {
            *slot = predictive.prob(x);
        }
        MvpsStatus::Ok
    })
}

/// Draws `n` states of the process with a fixed seed and writes the
/// 0-based state indices into `out_draws`. The same seed always yields the
/// same trajectory.
///
/// # Safety
/// `spec` must be a live handle and `out_draws` writable for `n` entries.
#[no_mangle]
pub unsafe extern "C" fn mvps_simulate(
    spec: *const MvpsSpec,
    n: usize,
    seed: u64,
    out_draws: *mut usize,
) -> MvpsStatus {
    if spec.is_null() || (out_draws.is_null() && n > 0) {
        return MvpsStatus::NullPointer;
    }
    let handle = &*spec;
    guarded(|| {
        let trajectory = match simulate(&handle.spec, n, seed) {
            Ok(trajectory) => trajectory,
            Err(_) => return MvpsStatus::InvalidArgument,
        };
        if n > 0 {
            let out = std::slice::from_raw_parts_mut(out_draws, n);
            out.copy_from_slice(&trajectory.draws);
        }
        MvpsStatus::Ok
    })
}

/// Smallest stick-breaking truncation level whose expected leftover mass is
/// at most `epsilon`, together with that leftover mass.
///
/// # Safety
/// `out_level` and `out_residual` must be valid, writable pointers.
#[no_mangle]
pub unsafe extern "C" fn mvps_truncation_level(
    theta: f64,
    epsilon: f64,
    out_level: *mut usize,
    out_residual: *mut f64,
) -> MvpsStatus {
    if out_level.is_null() || out_residual.is_null() {
        return MvpsStatus::NullPointer;
    }
    guarded(|| match truncation_level(theta, epsilon) {
        Ok((level, residual)) => {
            *out_level = level;
            *out_residual = residual;
            MvpsStatus::Ok
        }
        Err(_) => MvpsStatus::InvalidArgument,
    })
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mvps_version() -> *const std::os::raw::c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(version) => version,
        Err(_) => panic!("version string contains a NUL byte"),
    };
    VERSION.as_ptr()
}
