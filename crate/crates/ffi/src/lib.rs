//! C ABI over `sps-core`.
//!
//! Every entry point returns an [`SpsStatus`]. On failure the message is kept
//! per thread and can be read with [`sps_last_error_message`]. Objects are
//! opaque handles created by `sps_*_new`/`sps_*_solve` style calls and released
//! with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sps_core::evolution::{self, EnsembleState, EvolutionOptions, PerturbKind};
use sps_core::stability::stability_audit;
use sps_core::steady_state::{solve_steady, Method, SolverOptions, SteadyState};
use sps_core::{EquationOfState, Error, GridSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    Quadrature = 4,
    Eigen = 5,
    Truncation = 6,
    Infeasible = 7,
    NonConvergence = 8,
    Numerical = 9,
    Io = 10,
    Panic = 11,
}

impl From<&Error> for SpsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::LengthMismatch { .. } => Self::LengthMismatch,
            Error::Domain(_) | Error::Config(_) => Self::InvalidArgument,
            Error::Quadrature { .. } => Self::Quadrature,
            Error::Eigen(_) => Self::Eigen,
            Error::Truncation { .. } => Self::Truncation,
            Error::Infeasible(_) => Self::Infeasible,
            Error::NonConvergence { .. } => Self::NonConvergence,
            Error::Numerical(_) => Self::Numerical,
            Error::Io(_) | Error::Json(_) => Self::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SpsStatus, msg: impl Into<String>) -> SpsStatus {
    set_error(msg.into());
    status
}

/// Runs `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), SpsStatus>) -> SpsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SpsStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SpsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn core<T>(r: sps_core::Result<T>) -> Result<T, SpsStatus> {
    r.map_err(|e| fail(SpsStatus::from(&e), e.to_string()))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, SpsStatus> {
    p.as_ref().ok_or_else(|| fail(SpsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SpsStatus> {
    p.as_mut().ok_or_else(|| fail(SpsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), SpsStatus> {
    if buf.is_null() {
        return Err(fail(SpsStatus::NullPointer, "output buffer is null"));
    }
    if len != src.len() {
        return Err(fail(
            SpsStatus::LengthMismatch,
            format!("buffer holds {len} values, {} required", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next `sps_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sps_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Equation of state `f` with its Casimir integrals.
pub struct SpsEos(EquationOfState);

fn new_eos(make: impl FnOnce() -> sps_core::Result<EquationOfState>, out_eos: *mut *mut SpsEos) -> SpsStatus {
    guard(|| {
        let slot = unsafe { out(out_eos, "out_eos")? };
        *slot = Box::into_raw(Box::new(SpsEos(core(make())?)));
        Ok(())
    })
}

/// `f(s) = exp(−βs)`.
#[no_mangle]
pub extern "C" fn sps_eos_boltzmann(beta: f64, out_eos: *mut *mut SpsEos) -> SpsStatus {
    new_eos(|| EquationOfState::boltzmann(beta), out_eos)
}

/// Fermi-Dirac profile integrated over velocities, amplitude `c` and statistics parameter `eps`.
#[no_mangle]
pub extern "C" fn sps_eos_fermi_dirac(c: f64, eps: f64, out_eos: *mut *mut SpsEos) -> SpsStatus {
    new_eos(|| EquationOfState::fermi_dirac(c, eps), out_eos)
}

/// `f(s) = max(s0 − s, 0)^q`.
#[no_mangle]
pub extern "C" fn sps_eos_power_cutoff(s0: f64, q: f64, out_eos: *mut *mut SpsEos) -> SpsStatus {
    new_eos(|| EquationOfState::power_cutoff(s0, q), out_eos)
}

/// # Safety
/// `eos` must come from an `sps_eos_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sps_eos_free(eos: *mut SpsEos) {
    if !eos.is_null() {
        drop(Box::from_raw(eos));
    }
}

fn eos_eval(
    eos: *const SpsEos,
    x: f64,
    value: *mut f64,
    g: impl FnOnce(&EquationOfState, f64) -> sps_core::Result<f64>,
) -> SpsStatus {
    guard(|| {
        let eos = unsafe { deref(eos, "eos")? };
        let slot = unsafe { out(value, "value")? };
        *slot = core(g(&eos.0, x))?;
        Ok(())
    })
}

/// Occupation `f(s)`.
///
/// # Safety
/// `eos` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_eos_f(eos: *const SpsEos, s: f64, value: *mut f64) -> SpsStatus {
    eos_eval(eos, s, value, EquationOfState::f)
}

/// `F(s) = ∫_s^∞ f`.
///
/// # Safety
/// `eos` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_eos_tail_integral(eos: *const SpsEos, s: f64, value: *mut f64) -> SpsStatus {
    eos_eval(eos, s, value, EquationOfState::tail_integral)
}

/// `f⁻¹(λ)` for `λ > 0`.
///
/// # Safety
/// `eos` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_eos_inverse(eos: *const SpsEos, lambda: f64, value: *mut f64) -> SpsStatus {
    eos_eval(eos, lambda, value, EquationOfState::inverse)
}

/// Legendre conjugate `F*(s)` for `s ≤ 0`.
///
/// # Safety
/// `eos` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_eos_conjugate(eos: *const SpsEos, s: f64, value: *mut f64) -> SpsStatus {
    eos_eval(eos, s, value, EquationOfState::conjugate)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsMethod {
    Scf = 0,
    Ascent = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpsSolverOptions {
    /// Number of eigenpairs kept.
    pub k: usize,
    pub tol_v: f64,
    pub tol_lambda: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub method: SpsMethod,
}

/// Defaults for a grid with `n_points` interior nodes.
#[no_mangle]
pub extern "C" fn sps_solver_options_default(n_points: usize) -> SpsSolverOptions {
    let d = SolverOptions::new(n_points.min(48));
    SpsSolverOptions {
        k: d.k,
        tol_v: d.tol_v,
        tol_lambda: d.tol_lambda,
        max_iter: d.max_iter,
        damping: d.damping,
        method: SpsMethod::Scf,
    }
}

/// A solved steady state.
pub struct SpsSteady(SteadyState);

/// Solves for the steady state of total charge `total_charge` on `(0, length)`
/// with `n_points` interior nodes. `opts` may be null for defaults.
///
/// # Safety
/// `eos` must be a live handle, `opts` null or readable, `out_steady` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_solve(
    eos: *const SpsEos,
    length: f64,
    n_points: usize,
    total_charge: f64,
    opts: *const SpsSolverOptions,
    out_steady: *mut *mut SpsSteady,
) -> SpsStatus {
    guard(|| {
        let eos = unsafe { deref(eos, "eos")? };
        let slot = unsafe { out(out_steady, "out_steady")? };
        let o = match unsafe { opts.as_ref() } {
            Some(o) => *o,
            None => sps_solver_options_default(n_points),
        };
        let grid = core(GridSpec::new(length, n_points))?;
        let mut so = SolverOptions::new(o.k);
        so.tol_v = o.tol_v;
        so.tol_lambda = o.tol_lambda;
        so.max_iter = o.max_iter;
        so.damping = o.damping;
        so.method = match o.method {
            SpsMethod::Scf => Method::Scf,
            SpsMethod::Ascent => Method::Ascent,
        };
        let steady = core(solve_steady(&eos.0, total_charge, &grid, &so))?;
        *slot = Box::into_raw(Box::new(SpsSteady(steady)));
        Ok(())
    })
}

/// # Safety
/// `steady` must come from `sps_steady_solve` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_free(steady: *mut SpsSteady) {
    if !steady.is_null() {
        drop(Box::from_raw(steady));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpsCertificates {
    pub poisson_residual_inf: f64,
    pub charge_residual: f64,
    pub eos_residual: f64,
    pub phi_value: f64,
    pub hc_value: f64,
    pub trace_tail_bound: f64,
    pub min_potential: f64,
    pub sigma0: f64,
    pub iterations: usize,
    /// Grid size `N`; length of the potential and density arrays.
    pub n_points: usize,
    /// Truncation `K`; length of the eigenvalue and occupation arrays.
    pub k: usize,
}

/// # Safety
/// `steady` must be a live handle and `out_cert` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_certificates(steady: *const SpsSteady, out_cert: *mut SpsCertificates) -> SpsStatus {
    guard(|| {
        let s = &unsafe { deref(steady, "steady")? }.0;
        let slot = unsafe { out(out_cert, "out_cert")? };
        let c = &s.certificates;
        *slot = SpsCertificates {
            poisson_residual_inf: c.poisson_residual_inf,
            charge_residual: c.charge_residual,
            eos_residual: c.eos_residual,
            phi_value: c.phi_value,
            hc_value: c.hc_value,
            trace_tail_bound: c.trace_tail_bound,
            min_potential: c.min_potential,
            sigma0: s.sigma0,
            iterations: c.iterations,
            n_points: s.grid.n_points(),
            k: s.spectral.k(),
        };
        Ok(())
    })
}

fn steady_copy(steady: *const SpsSteady, buf: *mut f64, len: usize, pick: impl FnOnce(&SteadyState) -> &[f64]) -> SpsStatus {
    guard(|| {
        let s = &unsafe { deref(steady, "steady")? }.0;
        unsafe { copy_out(pick(s), buf, len) }
    })
}

/// Copies `V0` (length `n_points`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_copy_potential(steady: *const SpsSteady, buf: *mut f64, len: usize) -> SpsStatus {
    steady_copy(steady, buf, len, |s| &s.potential)
}

/// Copies the density (length `n_points`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_copy_density(steady: *const SpsSteady, buf: *mut f64, len: usize) -> SpsStatus {
    steady_copy(steady, buf, len, |s| &s.density)
}

/// Copies the eigenvalues `μ` (length `k`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_copy_eigenvalues(steady: *const SpsSteady, buf: *mut f64, len: usize) -> SpsStatus {
    steady_copy(steady, buf, len, |s| s.mu0())
}

/// Copies the occupations `λ` (length `k`).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sps_steady_copy_occupations(steady: *const SpsSteady, buf: *mut f64, len: usize) -> SpsStatus {
    steady_copy(steady, buf, len, |s| &s.lambda0)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpsPerturb {
    None = 0,
    Phase = 1,
    Occupation = 2,
    Mix = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpsStabilityParams {
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    pub midpoint_sweeps: usize,
    /// Unoccupied eigenfields propagated beyond the occupied ones.
    pub buffer: usize,
    pub perturb: SpsPerturb,
    pub eps: f64,
    pub seed: u64,
    /// Audit slack on `d(t) ≤ B`.
    pub tol: f64,
}

#[no_mangle]
pub extern "C" fn sps_stability_params_default() -> SpsStabilityParams {
    let e = EvolutionOptions::default();
    SpsStabilityParams {
        dt: e.dt,
        t_final: e.t_final,
        sample_every: e.sample_every,
        midpoint_sweeps: e.midpoint_sweeps,
        buffer: 4,
        perturb: SpsPerturb::None,
        eps: 0.0,
        seed: 0,
        tol: sps_core::stability::DEFAULT_AUDIT_TOL,
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SpsStabilityResult {
    /// Energy-Casimir excess `B` of the perturbed datum.
    pub bound: f64,
    /// `min_t (B − d(t))`.
    pub margin: f64,
    pub hc_drift: f64,
    pub max_step_mass_change: f64,
    pub max_orthonormality_defect: f64,
    pub samples: usize,
    pub violations: usize,
    pub pass: bool,
}

/// Perturbs the steady state, propagates it and audits `d(t) ≤ B`.
/// A failed audit is reported through `pass`, not the status.
///
/// # Safety
/// `steady` must be a live handle, `params` readable, `out_result` writable.
#[no_mangle]
pub unsafe extern "C" fn sps_stability_run(
    steady: *const SpsSteady,
    params: *const SpsStabilityParams,
    out_result: *mut SpsStabilityResult,
) -> SpsStatus {
    guard(|| {
        let s = &unsafe { deref(steady, "steady")? }.0;
        let p = *unsafe { deref(params, "params")? };
        let slot = unsafe { out(out_result, "out_result")? };
        let kind = match p.perturb {
            SpsPerturb::None => PerturbKind::None,
            SpsPerturb::Phase => PerturbKind::Phase,
            SpsPerturb::Occupation => PerturbKind::Occupation,
            SpsPerturb::Mix => PerturbKind::Mix,
        };
        let base = core(EnsembleState::from_steady(s, p.buffer))?;
        let initial = core(evolution::perturb(&base, &s.grid, kind, p.eps, p.seed))?;
        let opts = EvolutionOptions {
            dt: p.dt,
            t_final: p.t_final,
            sample_every: p.sample_every,
            midpoint_sweeps: p.midpoint_sweeps,
        };
        let (trace, _) = core(evolution::evolve(&initial, &s.grid, &s.eos, &opts, Some(&s.potential)))?;
        let report = core(stability_audit(&trace, s, p.tol))?;
        *slot = SpsStabilityResult {
            bound: report.bound,
            margin: report.margin,
            hc_drift: report.hc_drift,
            max_step_mass_change: trace.max_step_mass_change,
            max_orthonormality_defect: trace.max_orthonormality_defect,
            samples: trace.samples.len(),
            violations: report.violations.len(),
            pass: report.pass,
        };
        Ok(())
    })
}
