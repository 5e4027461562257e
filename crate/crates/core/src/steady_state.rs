//! The dual functional
//!
//! ```text
//! Φ(V, σ) = −½‖∇V‖² − Tr F(−Δ + V + σ) − σΛ
//! ```
//!
//! on nonnegative potentials, its gradient, the Fermi-level equation
//! `Tr f(−Δ + V + σ) = Λ`, and the solver for the unique maximizer `(V₀, σ₀)`.
//! The maximizer yields the steady state with eigenpairs `(μ₀ₖ, ψ₀ₖ)` of
//! `−Δ + V₀` and occupations `λ₀ₖ = f(μ₀ₖ + σ₀)`.
//!
//! Two maximization routes are provided. [`Method::Scf`] eliminates `σ` by
//! solving the Fermi level exactly and takes damped fixed-point steps
//! `V ← (1−α)V + α·P n(V)`, where `P` is the Dirichlet Poisson solve; the step
//! direction `P n − V` is the `H¹₀` gradient of the reduced functional, and
//! `α` is halved whenever `Φ` would decrease. [`Method::Ascent`] moves `(V, σ)`
//! jointly along the same gradient with an Armijo backtracking line search.

use serde::{Deserialize, Serialize};

use crate::casimir::EquationOfState;
use crate::error::{check_len, Error, Result};
use crate::evolution::ensemble_energy;
use crate::grid::{grad_norm_sq, laplacian_apply, max_abs, poisson_solve, GridSpec, RealField};
use crate::operator::{Hamiltonian, SpectralData, DEFAULT_TRACE_REL_TOL, NEGATIVE_POTENTIAL_TOL};

/// Relative slack used when comparing two evaluations of `Φ`; differences
/// below it are at the roundoff level of the spectral sums.
pub const PHI_ROUNDOFF: f64 = 1e-13;

/// A point `(V, σ)` of the dual problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    potential: RealField,
    sigma: f64,
}

impl DualPoint {
    pub fn new(potential: RealField, sigma: f64) -> Result<Self> {
        if !sigma.is_finite() {
            return Err(Error::Domain(format!("sigma must be finite, got {sigma}")));
        }
        if let Some(v) = potential.iter().find(|&&v| !(v.is_finite() && v >= -NEGATIVE_POTENTIAL_TOL)) {
            return Err(Error::Domain(format!("dual potential must be nonnegative, found {v}")));
        }
        Ok(Self { potential, sigma })
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scf,
    Ascent,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scf" => Ok(Self::Scf),
            "ascent" => Ok(Self::Ascent),
            other => Err(Error::Config(format!("unknown solver method '{other}' (scf | ascent)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub k: usize,
    pub tol_v: f64,
    pub tol_lambda: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub method: Method,
    pub trace_rel_tol: f64,
    pub initial_potential: Option<RealField>,
}

impl SolverOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            tol_v: 1e-8,
            tol_lambda: 1e-10,
            max_iter: 500,
            damping: 0.5,
            method: Method::Scf,
            trace_rel_tol: DEFAULT_TRACE_REL_TOL,
            initial_potential: None,
        }
    }

    /// Default truncation `K = min(N, 48)`.
    pub fn for_grid(grid: &GridSpec) -> Self {
        Self::new(grid.n_points().min(48))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificates {
    /// `‖(−Δ_h)V₀ − Σ λ₀ₖ|ψ₀ₖ|²‖_∞`.
    pub poisson_residual_inf: f64,
    /// `|Σ λ₀ₖ − Λ|`.
    pub charge_residual: f64,
    /// `max_k |λ₀ₖ − f(μ₀ₖ + σ₀)|`.
    pub eos_residual: f64,
    pub phi_value: f64,
    pub hc_value: f64,
    /// Bound on the trace mass beyond the `K` computed modes.
    pub trace_tail_bound: f64,
    pub min_potential: f64,
    pub iterations: usize,
}

/// Maximizer of `Φ` together with the steady state it generates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyState {
    pub grid: GridSpec,
    pub eos: EquationOfState,
    #[serde(rename = "Lambda")]
    pub total_charge: f64,
    pub method: Method,
    #[serde(rename = "V0")]
    pub potential: RealField,
    pub sigma0: f64,
    pub spectral: SpectralData,
    pub lambda0: Vec<f64>,
    pub density: RealField,
    pub certificates: Certificates,
    /// `Φ` at every accepted iterate, starting from the initial guess.
    pub phi_history: Vec<f64>,
    /// Poisson residual at every accepted iterate.
    pub residual_history: Vec<f64>,
}

impl SteadyState {
    pub fn mu0(&self) -> &[f64] {
        &self.spectral.mu
    }

    /// Number of modes with nonzero occupation.
    pub fn occupied_modes(&self) -> usize {
        self.lambda0.iter().filter(|&&l| l > 0.0).count()
    }
}

/// Everything derived from one eigensolve at a dual point.
struct Evaluation {
    spectral: SpectralData,
    sigma: f64,
    phi: f64,
    trace_tail: f64,
    occupations: Vec<f64>,
    density: RealField,
}

fn phi_from_spectrum(
    grid: &GridSpec,
    potential: &[f64],
    spectral: &SpectralData,
    sigma: f64,
    eos: &EquationOfState,
    total_charge: f64,
    rel_tol: f64,
) -> Result<(f64, f64)> {
    let trace = spectral.trace_tail_integral(sigma, eos, rel_tol)?;
    let phi = -0.5 * grad_norm_sq(grid, potential)? - trace.partial - sigma * total_charge;
    Ok((phi, trace.tail_bound))
}

fn evaluate(
    grid: &GridSpec,
    potential: &[f64],
    sigma: Option<f64>,
    eos: &EquationOfState,
    total_charge: f64,
    opts: &SolverOptions,
) -> Result<Evaluation> {
    let spectral = Hamiltonian::new(grid, potential)?.eigensolve(opts.k)?;
    let sigma = match sigma {
        Some(s) => s,
        None => fermi_level(&spectral, eos, total_charge, opts.trace_rel_tol)?,
    };
    let (phi, trace_tail) =
        phi_from_spectrum(grid, potential, &spectral, sigma, eos, total_charge, opts.trace_rel_tol)?;
    let occupations = spectral.occupations(sigma, eos)?;
    let density = spectral.density(&occupations)?;
    Ok(Evaluation { spectral, sigma, phi, trace_tail, occupations, density })
}

fn validate_problem(grid: &GridSpec, total_charge: f64, k: usize) -> Result<()> {
    if !(total_charge.is_finite() && total_charge > 0.0) {
        return Err(Error::Domain(format!("total charge must be positive, got {total_charge}")));
    }
    if k == 0 || k > grid.n_points() {
        return Err(Error::Domain(format!("K must lie in 1..={}, got {k}", grid.n_points())));
    }
    Ok(())
}

/// `Φ(V, σ)` using the lowest `k` eigenvalues of `−Δ + V`.
pub fn phi_eval(
    point: &DualPoint,
    eos: &EquationOfState,
    total_charge: f64,
    grid: &GridSpec,
    k: usize,
) -> Result<f64> {
    check_len(grid.n_points(), point.potential.len())?;
    let spectral = Hamiltonian::new(grid, &point.potential)?.eigensolve(k)?;
    phi_from_spectrum(grid, &point.potential, &spectral, point.sigma, eos, total_charge, DEFAULT_TRACE_REL_TOL)
        .map(|(phi, _)| phi)
}

/// Gradient of `Φ`: the field `ΔV + Σ f(μₖ+σ)|ψₖ|²` (the `L²_h` Riesz
/// representative of `∂Φ/∂V`) and the scalar `Tr f(−Δ+V+σ) − Λ`.
pub fn phi_gradient(
    point: &DualPoint,
    eos: &EquationOfState,
    total_charge: f64,
    grid: &GridSpec,
    k: usize,
) -> Result<(RealField, f64)> {
    check_len(grid.n_points(), point.potential.len())?;
    let spectral = Hamiltonian::new(grid, &point.potential)?.eigensolve(k)?;
    let occupations = spectral.occupations(point.sigma, eos)?;
    let density = spectral.density(&occupations)?;
    let lap = laplacian_apply(grid, &point.potential)?;
    let field = lap.iter().zip(&density).map(|(l, n)| n - l).collect();
    let charge = spectral.trace_occupation(point.sigma, eos, DEFAULT_TRACE_REL_TOL)?.partial;
    Ok((field, charge - total_charge))
}

/// Fermi level for the operator `h`: the unique `σ` with `Tr f(h + σ) = Λ`.
pub fn solve_fermi_level(h: &Hamiltonian, eos: &EquationOfState, total_charge: f64, k: usize) -> Result<f64> {
    validate_problem(h.grid(), total_charge, k)?;
    fermi_level(&h.eigensolve(k)?, eos, total_charge, DEFAULT_TRACE_REL_TOL)
}

/// Fermi level from precomputed spectral data, by bracketed bisection.
pub fn fermi_level(spectral: &SpectralData, eos: &EquationOfState, total_charge: f64, rel_tol: f64) -> Result<f64> {
    if !(total_charge.is_finite() && total_charge > 0.0) {
        return Err(Error::Domain(format!("total charge must be positive, got {total_charge}")));
    }
    let mismatch = |sigma: f64| spectral.partial_trace_occupation(sigma, eos).map(|t| t - total_charge);

    // Lowest σ for which no neglected mode can be occupied under a cutoff.
    let sigma_floor = if eos.cutoff().is_finite() && spectral.neglected > 0 {
        eos.cutoff() - spectral.first_neglected_lower_bound
    } else {
        f64::NEG_INFINITY
    };

    let mut hi = 0.0_f64.max(sigma_floor);
    let mut step = 1.0;
    while mismatch(hi)? > 0.0 {
        hi += step;
        step *= 2.0;
        if step > 1e12 {
            return Err(Error::Numerical("Fermi level: no upper bracket".into()));
        }
    }
    let mut lo = hi - 1.0;
    step = 1.0;
    loop {
        if lo < sigma_floor {
            if mismatch(sigma_floor)? < 0.0 {
                return Err(Error::Infeasible(format!(
                    "total charge {total_charge} exceeds what {} modes can hold under the cutoff",
                    spectral.k()
                )));
            }
            lo = sigma_floor;
            break;
        }
        if mismatch(lo)? > 0.0 {
            break;
        }
        hi = lo;
        lo -= step;
        step *= 2.0;
        if step > 1e12 {
            return Err(Error::Numerical("Fermi level: no lower bracket".into()));
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mismatch(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (m_lo, m_hi) = (mismatch(lo)?, mismatch(hi)?);
    let sigma = if m_lo.abs() <= m_hi.abs() { lo } else { hi };
    let miss = m_lo.abs().min(m_hi.abs());
    if miss > 1e-11 * total_charge.max(1.0) {
        return Err(Error::Numerical(format!("Fermi level: charge mismatch {miss:e} after bisection")));
    }
    spectral.trace_occupation(sigma, eos, rel_tol)?;
    Ok(sigma)
}

fn poisson_residual(grid: &GridSpec, potential: &[f64], density: &[f64]) -> Result<f64> {
    let lap = laplacian_apply(grid, potential)?;
    Ok(lap.iter().zip(density).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Maximizes `Φ` and returns the steady state with its certificates.
pub fn solve_steady(
    eos: &EquationOfState,
    total_charge: f64,
    grid: &GridSpec,
    opts: &SolverOptions,
) -> Result<SteadyState> {
    validate_problem(grid, total_charge, opts.k)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Domain(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    if !(opts.tol_v > 0.0 && opts.tol_lambda > 0.0) {
        return Err(Error::Domain("solver tolerances must be positive".into()));
    }
    let initial = match &opts.initial_potential {
        Some(v) => {
            check_len(grid.n_points(), v.len())?;
            v.clone()
        }
        None => vec![0.0; grid.n_points()],
    };
    match opts.method {
        Method::Scf => scf(eos, total_charge, grid, opts, initial),
        Method::Ascent => ascent(eos, total_charge, grid, opts, initial),
    }
}

fn check_nonnegative(v: &[f64]) -> Result<()> {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVE_POTENTIAL_TOL {
        return Err(Error::Numerical(format!(
            "iterate left the nonnegative cone (min V = {min:e})"
        )));
    }
    Ok(())
}

fn accepts(new: f64, old: f64) -> bool {
    new >= old - PHI_ROUNDOFF * (1.0 + old.abs())
}

fn scf(
    eos: &EquationOfState,
    total_charge: f64,
    grid: &GridSpec,
    opts: &SolverOptions,
    mut potential: RealField,
) -> Result<SteadyState> {
    let mut current = evaluate(grid, &potential, None, eos, total_charge, opts)?;
    let mut alpha = opts.damping;
    let mut phi_history = vec![current.phi];
    let mut residual_history = Vec::new();
    for iter in 0..opts.max_iter {
        let res = poisson_residual(grid, &potential, &current.density)?;
        let charge: f64 = current.occupations.iter().sum();
        residual_history.push(res);
        if res < opts.tol_v && (charge - total_charge).abs() < opts.tol_lambda {
            return finish(grid, eos, total_charge, opts.method, potential, current, phi_history, residual_history, iter);
        }
        let target = poisson_solve(grid, &current.density)?;
        loop {
            let trial: RealField =
                potential.iter().zip(&target).map(|(v, t)| (1.0 - alpha) * v + alpha * t).collect();
            check_nonnegative(&trial)?;
            let next = evaluate(grid, &trial, None, eos, total_charge, opts)?;
            if accepts(next.phi, current.phi) {
                potential = trial;
                current = next;
                phi_history.push(current.phi);
                // a rejection far from the maximizer must not cap the rate near it
                alpha = (2.0 * alpha).min(opts.damping);
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    last_residual: res,
                    history: residual_history,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_residual: residual_history.last().copied().unwrap_or(f64::NAN),
        history: residual_history,
    })
}

fn ascent(
    eos: &EquationOfState,
    total_charge: f64,
    grid: &GridSpec,
    opts: &SolverOptions,
    mut potential: RealField,
) -> Result<SteadyState> {
    const ARMIJO: f64 = 1e-4;
    let mut current = evaluate(grid, &potential, None, eos, total_charge, opts)?;
    let mut step = opts.damping;
    let mut phi_history = vec![current.phi];
    let mut residual_history = Vec::new();
    for iter in 0..opts.max_iter {
        let res = poisson_residual(grid, &potential, &current.density)?;
        let charge: f64 = current.occupations.iter().sum();
        let charge_grad = charge - total_charge;
        residual_history.push(res);
        if res < opts.tol_v && charge_grad.abs() < opts.tol_lambda {
            // place σ exactly on the charge constraint for the reported state
            let polished = evaluate(grid, &potential, None, eos, total_charge, opts)?;
            return finish(grid, eos, total_charge, opts.method, potential, polished, phi_history, residual_history, iter);
        }
        let target = poisson_solve(grid, &current.density)?;
        let dir: RealField = target.iter().zip(&potential).map(|(t, v)| t - v).collect();
        let lap = laplacian_apply(grid, &potential)?;
        let grad: RealField = current.density.iter().zip(&lap).map(|(n, l)| n - l).collect();
        // scale the σ step by the inverse charge susceptibility −∂Tr f/∂σ
        let delta = 1e-5 * current.sigma.abs().max(1.0);
        let susceptibility = (current.spectral.partial_trace_occupation(current.sigma - delta, eos)?
            - current.spectral.partial_trace_occupation(current.sigma + delta, eos)?)
            / (2.0 * delta);
        let sigma_dir = if susceptibility > 0.0 && susceptibility.is_finite() {
            charge_grad / susceptibility
        } else {
            charge_grad
        };
        let slope = crate::grid::inner_real(grid, &grad, &dir)? + charge_grad * sigma_dir;
        let mut t = (2.0 * step).min(1.0);
        loop {
            let trial: RealField = potential.iter().zip(&dir).map(|(v, d)| v + t * d).collect();
            check_nonnegative(&trial)?;
            let sigma = current.sigma + t * sigma_dir;
            let next = evaluate(grid, &trial, Some(sigma), eos, total_charge, opts);
            if let Ok(next) = next {
                // Near the maximizer Φ changes by less than its roundoff, so
                // the Armijo test alone cannot discriminate steps. A
                // nonnegative directional derivative at the trial point
                // certifies the increase by concavity.
                let lap = laplacian_apply(grid, &trial)?;
                let grad_next: RealField = next.density.iter().zip(&lap).map(|(n, l)| n - l).collect();
                let charge_next: f64 = next.occupations.iter().sum::<f64>() - total_charge;
                let along = crate::grid::inner_real(grid, &grad_next, &dir)? + charge_next * sigma_dir;
                let armijo = next.phi >= current.phi + ARMIJO * t * slope
                    && t * slope > PHI_ROUNDOFF * (1.0 + current.phi.abs());
                if (along >= 0.0 && accepts(next.phi, current.phi)) || armijo {
                    potential = trial;
                    current = next;
                    phi_history.push(current.phi);
                    step = t;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Err(Error::NonConvergence { iterations: iter, last_residual: res, history: residual_history });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        last_residual: residual_history.last().copied().unwrap_or(f64::NAN),
        history: residual_history,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: &GridSpec,
    eos: &EquationOfState,
    total_charge: f64,
    method: Method,
    potential: RealField,
    eval: Evaluation,
    phi_history: Vec<f64>,
    residual_history: Vec<f64>,
    iterations: usize,
) -> Result<SteadyState> {
    check_nonnegative(&potential)?;
    let Evaluation { spectral, sigma, phi, trace_tail, occupations, density } = eval;
    let eos_residual = spectral
        .mu
        .iter()
        .zip(&occupations)
        .map(|(&m, &l)| eos.f(m + sigma).map(|f| (f - l).abs()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let fields: Vec<&[f64]> = spectral.psi.iter().map(Vec::as_slice).collect();
    let energy = ensemble_energy(grid, &fields, &occupations)?;
    let hc_value = eos.casimir_sum(&occupations)? + energy.total();
    let certificates = Certificates {
        poisson_residual_inf: poisson_residual(grid, &potential, &density)?,
        charge_residual: (occupations.iter().sum::<f64>() - total_charge).abs(),
        eos_residual,
        phi_value: phi,
        hc_value,
        trace_tail_bound: trace_tail,
        min_potential: potential.iter().copied().fold(f64::INFINITY, f64::min),
        iterations,
    };
    Ok(SteadyState {
        grid: *grid,
        eos: *eos,
        total_charge,
        method,
        potential,
        sigma0: sigma,
        spectral,
        lambda0: occupations,
        density,
        certificates,
        phi_history,
        residual_history,
    })
}

/// `‖V‖_∞`, exposed for weak-coupling checks.
pub fn potential_sup(state: &SteadyState) -> f64 {
    max_abs(&state.potential)
}
