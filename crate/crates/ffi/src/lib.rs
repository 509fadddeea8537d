//! C ABI for the spinsta engine.
//!
//! Objects cross the boundary as opaque handles created and destroyed by this
//! library; every function returns a [`SpinstaStatus`] and writes results
//! through out-pointers. On any non-Ok status a human-readable message is
//! stored in thread-local state and can be fetched with
//! [`spinsta_last_error`]. The matching C header is generated into
//! `include/spinsta.h` by the build script.

use libc::c_char;
use spinsta::anneal::{anneal_once, annealing_integrator};
use spinsta::cd::{integrate, IntegratorConfig};
use spinsta::models::{
    annealing_hamiltonian, lmg_hamiltonian, rfim_instance_with_boundary, transverse_fields,
    BoundaryKind, FieldKind, IsingInstance, LmgParams, Schedule,
};
use spinsta::oracle::ground_state_maxflow;
use spinsta::spin::SpinConfig;
use std::cell::RefCell;
use std::ffi::{CStr, CString};

/// Status code returned by every API function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinstaStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A scalar argument was out of range.
    InvalidArgument = 2,
    /// Model construction failed; see spinsta_last_error().
    Model = 3,
    /// The exact ground-state oracle failed; see spinsta_last_error().
    Oracle = 4,
    /// The annealing run failed to start; see spinsta_last_error().
    Anneal = 5,
    /// A JSON payload could not be parsed or encoded.
    Json = 6,
    /// A string argument was not valid UTF-8.
    Utf8 = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl AsRef<str>) {
    let sanitized = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(sanitized).expect("NULs removed"));
    });
}

fn fail(status: SpinstaStatus, message: impl AsRef<str>) -> SpinstaStatus {
    set_error(message);
    status
}

/// Copies the message of the most recent error on this thread into `buffer`
/// (NUL-terminated, truncated to `capacity` bytes) and returns the full
/// message length in bytes excluding the NUL. Returns 0 when no error has
/// been recorded. `buffer` may be null to query the length alone.
///
/// # Safety
/// `buffer`, when non-null, must point to at least `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn spinsta_last_error(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(message) = slot.as_ref() else {
            return 0;
        };
        let bytes = message.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        bytes.len()
    })
}

/// Opaque Ising instance handle.
pub struct SpinstaInstance {
    inner: IsingInstance,
}

/// Boundary condition selector for spinsta_instance_rfim().
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinstaBoundary {
    Open = 0,
    Periodic = 1,
}

/// Transverse-field selector for spinsta_anneal().
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinstaFieldKind {
    /// h_i^x = 1 everywhere.
    Uniform = 0,
    /// h_i^x drawn i.i.d. per spin from the seeded generator.
    RandomIid = 1,
}

/// Builds the standard random-field Ising benchmark instance on an L x L
/// lattice (J = 1 bonds, fields +-0.3 seeded by `seed`) and stores a new
/// handle in `*out`. Periodic boundaries require L >= 3.
///
/// # Safety
/// `out` must be a valid pointer; on Ok it receives an owned handle that must
/// be released with spinsta_instance_free().
#[no_mangle]
pub unsafe extern "C" fn spinsta_instance_rfim(
    l: usize,
    seed: u64,
    boundary: SpinstaBoundary,
    out: *mut *mut SpinstaInstance,
) -> SpinstaStatus {
    if out.is_null() {
        return fail(SpinstaStatus::NullArgument, "out pointer is null");
    }
    let boundary = match boundary {
        SpinstaBoundary::Open => BoundaryKind::Open,
        SpinstaBoundary::Periodic => BoundaryKind::Periodic,
    };
    if l == 0 || (boundary == BoundaryKind::Periodic && l < 3) {
        return fail(
            SpinstaStatus::InvalidArgument,
            format!("L = {l} is invalid for the requested boundary"),
        );
    }
    let inner = rfim_instance_with_boundary(l, seed, boundary);
    *out = Box::into_raw(Box::new(SpinstaInstance { inner }));
    SpinstaStatus::Ok
}

/// Parses an instance from its canonical JSON form and stores a new handle in
/// `*out`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer and
/// on Ok receives an owned handle to release with spinsta_instance_free().
#[no_mangle]
pub unsafe extern "C" fn spinsta_instance_from_json(
    json: *const c_char,
    out: *mut *mut SpinstaInstance,
) -> SpinstaStatus {
    if json.is_null() || out.is_null() {
        return fail(SpinstaStatus::NullArgument, "json or out pointer is null");
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(text) => text,
        Err(e) => return fail(SpinstaStatus::Utf8, e.to_string()),
    };
    let inner: IsingInstance = match serde_json::from_str(text) {
        Ok(inner) => inner,
        Err(e) => return fail(SpinstaStatus::Json, e.to_string()),
    };
    if let Err(e) = inner.validate() {
        return fail(SpinstaStatus::Model, e.to_string());
    }
    *out = Box::into_raw(Box::new(SpinstaInstance { inner }));
    SpinstaStatus::Ok
}

/// Serializes the instance to its canonical JSON form as a NUL-terminated
/// string owned by the library; release it with spinsta_string_free().
///
/// # Safety
/// `instance` must be a live handle from this library and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn spinsta_instance_to_json(
    instance: *const SpinstaInstance,
    out: *mut *mut c_char,
) -> SpinstaStatus {
    if instance.is_null() || out.is_null() {
        return fail(SpinstaStatus::NullArgument, "instance or out pointer is null");
    }
    let text = match serde_json::to_string(&(*instance).inner) {
        Ok(text) => text,
        Err(e) => return fail(SpinstaStatus::Json, e.to_string()),
    };
    match CString::new(text) {
        Ok(s) => {
            *out = s.into_raw();
            SpinstaStatus::Ok
        }
        Err(e) => fail(SpinstaStatus::Json, e.to_string()),
    }
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have been returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn spinsta_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of spins of the instance.
///
/// # Safety
/// `instance` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spinsta_instance_spin_count(
    instance: *const SpinstaInstance,
    out: *mut usize,
) -> SpinstaStatus {
    if instance.is_null() || out.is_null() {
        return fail(SpinstaStatus::NullArgument, "instance or out pointer is null");
    }
    *out = (*instance).inner.spin_count();
    SpinstaStatus::Ok
}

/// Releases an instance handle. Null is a no-op.
///
/// # Safety
/// `instance` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spinsta_instance_free(instance: *mut SpinstaInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Computes the exact ground state by the max-flow oracle. Writes the energy
/// to `*energy` and, when `spins` is non-null, the +-1 configuration into
/// `spins[0..spin_count]`.
///
/// # Safety
/// `instance` must be a live handle, `energy` a valid pointer, and `spins`
/// either null or valid for `spin_count` writes.
#[no_mangle]
pub unsafe extern "C" fn spinsta_ground_state(
    instance: *const SpinstaInstance,
    energy: *mut f64,
    spins: *mut i8,
    spin_count: usize,
) -> SpinstaStatus {
    if instance.is_null() || energy.is_null() {
        return fail(SpinstaStatus::NullArgument, "instance or energy pointer is null");
    }
    let inner = &(*instance).inner;
    let result = match ground_state_maxflow(inner) {
        Ok(result) => result,
        Err(e) => return fail(SpinstaStatus::Oracle, e.to_string()),
    };
    if !spins.is_null() {
        if spin_count < result.spins.len() {
            return fail(
                SpinstaStatus::InvalidArgument,
                format!(
                    "spin buffer holds {spin_count} entries but the instance has {}",
                    result.spins.len()
                ),
            );
        }
        std::ptr::copy_nonoverlapping(result.spins.as_ptr(), spins, result.spins.len());
    }
    *energy = result.energy;
    SpinstaStatus::Ok
}

/// Result of one annealing run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpinstaAnnealResult {
    /// Ising energy of the rounded final configuration.
    pub energy: f64,
    /// True when the trajectory halted on a criticality event before the end
    /// of the sweep (the energy then comes from the halted state).
    pub halted: bool,
    /// Number of accepted integrator steps.
    pub steps: usize,
}

/// Runs one counter-diabatically driven annealing sweep of duration `tau`
/// with base step `dt` and transverse fields drawn from `field_seed`, and
/// writes the outcome to `*out`. When `spins` is non-null the rounded +-1
/// configuration is written into `spins[0..spin_count]`.
///
/// # Safety
/// `instance` must be a live handle, `out` a valid pointer, and `spins`
/// either null or valid for `spin_count` writes.
#[no_mangle]
pub unsafe extern "C" fn spinsta_anneal(
    instance: *const SpinstaInstance,
    field_kind: SpinstaFieldKind,
    field_seed: u64,
    tau: f64,
    dt: f64,
    out: *mut SpinstaAnnealResult,
    spins: *mut i8,
    spin_count: usize,
) -> SpinstaStatus {
    if instance.is_null() || out.is_null() {
        return fail(SpinstaStatus::NullArgument, "instance or out pointer is null");
    }
    let inner = &(*instance).inner;
    let kind = match field_kind {
        SpinstaFieldKind::Uniform => FieldKind::Uniform,
        SpinstaFieldKind::RandomIid => FieldKind::RandomIid,
    };
    let schedule = match Schedule::new(tau) {
        Ok(schedule) => schedule,
        Err(e) => return fail(SpinstaStatus::InvalidArgument, e.to_string()),
    };
    let cfg = annealing_integrator(dt);
    if let Err(e) = cfg.validate() {
        return fail(SpinstaStatus::InvalidArgument, e);
    }
    let fields = transverse_fields(inner.spin_count(), kind, field_seed);
    let ham = match annealing_hamiltonian(inner.clone(), fields, schedule) {
        Ok(ham) => ham,
        Err(e) => return fail(SpinstaStatus::Model, e.to_string()),
    };
    let report = match anneal_once(&ham, &cfg) {
        Ok(report) => report,
        Err(e) => return fail(SpinstaStatus::Anneal, e.to_string()),
    };
    if !spins.is_null() {
        if spin_count < report.spins.len() {
            return fail(
                SpinstaStatus::InvalidArgument,
                format!(
                    "spin buffer holds {spin_count} entries but the instance has {}",
                    report.spins.len()
                ),
            );
        }
        std::ptr::copy_nonoverlapping(report.spins.as_ptr(), spins, report.spins.len());
    }
    *out = SpinstaAnnealResult {
        energy: report.e_est,
        halted: report.criticality.is_some(),
        steps: report.steps,
    };
    SpinstaStatus::Ok
}

/// Integrates the fully connected benchmark sweep (N spins, coupling J,
/// initial field h0 = h0_over_j * J, duration tau, base step dt) from the
/// all-up state and writes the final mean z magnetization to `*final_mz`.
/// `*critical` is set when the trajectory halted on a criticality event
/// before the end of the sweep.
///
/// # Safety
/// `final_mz` and `critical` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn spinsta_lmg_sweep(
    h0_over_j: f64,
    coupling: f64,
    tau: f64,
    n: usize,
    dt: f64,
    final_mz: *mut f64,
    critical: *mut bool,
) -> SpinstaStatus {
    if final_mz.is_null() || critical.is_null() {
        return fail(SpinstaStatus::NullArgument, "out pointer is null");
    }
    let ham = match lmg_hamiltonian(LmgParams {
        coupling,
        h0: h0_over_j * coupling,
        tau,
        n,
    }) {
        Ok(ham) => ham,
        Err(e) => return fail(SpinstaStatus::InvalidArgument, e.to_string()),
    };
    let cfg = IntegratorConfig {
        dt,
        record_stride: usize::MAX,
        ..Default::default()
    };
    if let Err(e) = cfg.validate() {
        return fail(SpinstaStatus::InvalidArgument, e);
    }
    let state0 = SpinConfig::uniform(n, nalgebra::Vector3::new(0.0, 0.0, 1.0))
        .expect("unit vector");
    let record = integrate(&ham, &state0, 0.0, tau, &cfg);
    *final_mz = record.final_state.mean_mz();
    *critical = record.criticality_event.is_some();
    SpinstaStatus::Ok
}
