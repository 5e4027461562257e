//! Audits of the inequalities behind energy-Casimir stability: the conjugacy
//! bound, the Jensen inequality for `F(−Δ+V)`, the trace inequality with its
//! equality case, and the stability estimate
//!
//! ```text
//! ½‖∇V(t) − ∇V₀‖² ≤ H_C(ψ(0), λ) − H_C(ψ₀, λ₀)
//! ```
//!
//! along propagated trajectories.
//!
//! The steady state solves the equation of state with the shifted profile
//! `f(· + σ₀)`, whose Casimir is `H_C + σ₀Σλ`. The bound is therefore formed
//! with that shift; it only matters when the perturbation changes `Σλ`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::casimir::EquationOfState;
use crate::error::{check_len, Error, Result};
use crate::evolution::{energy_casimir, EnsembleState, EvolutionTrace};
use crate::grid::{inner, norm_l2, GridSpec};
use crate::operator::{Hamiltonian, SpectralData};
use crate::steady_state::SteadyState;

pub const DEFAULT_AUDIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `B`, the energy-Casimir excess of the initial datum.
    pub bound: f64,
    pub hc_initial: f64,
    pub hc_steady: f64,
    pub sigma0: f64,
    pub charge_initial: f64,
    pub total_charge: f64,
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    /// `min_t (B − d(t))`.
    pub margin: f64,
    pub violations: Vec<Violation>,
    /// `max_t |H_C(t) − H_C(0)|` along the trace.
    pub hc_drift: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Audit on plain series: sample times, `H_C(t)`, `d(t)` and the initial `Σλ`.
pub fn audit_series(
    steady: &SteadyState,
    times: &[f64],
    hc: &[f64],
    distances: &[f64],
    charge_initial: f64,
    tol: f64,
) -> Result<StabilityReport> {
    check_len(times.len(), hc.len())?;
    check_len(times.len(), distances.len())?;
    if times.is_empty() {
        return Err(Error::Domain("empty trace".into()));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::Domain(format!("audit tolerance must be nonnegative, got {tol}")));
    }
    let sigma0 = steady.sigma0;
    let hc_steady = steady.certificates.hc_value;
    let bound = (hc[0] + sigma0 * charge_initial) - (hc_steady + sigma0 * steady.total_charge);
    let mut margin = f64::INFINITY;
    let mut violations = Vec::new();
    for (&t, &d) in times.iter().zip(distances) {
        margin = margin.min(bound - d);
        if d > bound + tol {
            violations.push(Violation { t, excess: d - bound });
        }
    }
    let hc_drift = hc.iter().map(|h| (h - hc[0]).abs()).fold(0.0, f64::max);
    Ok(StabilityReport {
        bound,
        hc_initial: hc[0],
        hc_steady,
        sigma0,
        charge_initial,
        total_charge: steady.total_charge,
        times: times.to_vec(),
        distances: distances.to_vec(),
        margin,
        pass: violations.is_empty(),
        violations,
        hc_drift,
        tol,
    })
}

/// Checks every sample of `trace` against the bound computed at its first sample.
pub fn stability_audit(trace: &EvolutionTrace, steady: &SteadyState, tol: f64) -> Result<StabilityReport> {
    if trace.grid != steady.grid {
        return Err(Error::Domain("trace and steady state live on different grids".into()));
    }
    if trace.eos != steady.eos {
        return Err(Error::Domain("trace and steady state use different equations of state".into()));
    }
    let times: Vec<f64> = trace.samples.iter().map(|s| s.t).collect();
    let hc: Vec<f64> = trace.samples.iter().map(|s| s.energy_casimir).collect();
    let distances = trace
        .samples
        .iter()
        .map(|s| {
            s.dist.ok_or_else(|| Error::Domain("trace was recorded without a reference potential".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    audit_series(steady, &times, &hc, &distances, trace.total_charge, tol)
}

/// `F*(−λ) + λμ + F(μ)`, nonnegative and zero exactly at `λ = f(μ)`.
pub fn conjugacy_gap(eos: &EquationOfState, lambda: f64, mu: f64) -> Result<f64> {
    Ok(eos.conjugate(-lambda)? + lambda * mu + eos.tail_integral(mu)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceInequality {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// `Σ F*(−λₖ) + Σ λₖ⟨ψₖ, (−Δ+V)ψₖ⟩ ≥ −Tr F(−Δ+V)`.
///
/// The right side uses the `k` lowest eigenvalues only; since `F ≥ 0` that
/// overestimates it, so the reported margin never exceeds the exact one.
pub fn trace_inequality_check(
    state: &EnsembleState,
    v: &[f64],
    eos: &EquationOfState,
    grid: &GridSpec,
    k: usize,
) -> Result<TraceInequality> {
    let h = Hamiltonian::new(grid, v)?;
    let mut lhs = eos.casimir_sum(&state.lambda)?;
    for (l, psi) in state.lambda.iter().zip(&state.psi) {
        if *l != 0.0 {
            lhs += l * inner(grid, psi, &h.apply(psi)?)?.re;
        }
    }
    let rhs = -h.eigensolve(k)?.partial_trace_tail_integral(0.0, eos)?;
    Ok(TraceInequality { lhs, rhs, margin: lhs - rhs })
}

/// `(F(⟨ψ, Hψ⟩), ⟨ψ, F(H)ψ⟩)` for `H = −Δ + V`, the latter expanded in the `k`
/// lowest eigenfields (pass `k = N` for the full operator).
pub fn jensen_check(
    psi: &[Complex64],
    v: &[f64],
    eos: &EquationOfState,
    grid: &GridSpec,
    k: usize,
) -> Result<(f64, f64)> {
    let norm = norm_l2(grid, psi)?;
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!("state must be normalized, ‖ψ‖ = {norm}")));
    }
    let h = Hamiltonian::new(grid, v)?;
    let expectation = inner(grid, psi, &h.apply(psi)?)?.re;
    let spec = h.eigensolve(k)?;
    let mut rhs = 0.0;
    for (mu, phi) in spec.mu.iter().zip(&spec.psi) {
        let phi: Vec<Complex64> = phi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let c = inner(grid, &phi, psi)?;
        rhs += eos.tail_integral(*mu)? * c.norm_sqr();
    }
    Ok((eos.tail_integral(expectation)?, rhs))
}

/// Haar-distributed `k × k` unitary: QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal moved into `Q`.
pub fn haar_unitary(k: usize, rng: &mut impl Rng) -> DMatrix<Complex64> {
    let z = DMatrix::<Complex64>::from_fn(k, k, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
        for i in 0..k {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random admissible ensemble: a Haar rotation of the lowest `k` eigenfields in
/// `spectral`, occupations `f(s)` at uniform levels `s` around the spectrum,
/// rescaled by a random factor in `(0, 2]`.
pub fn random_ensemble(
    spectral: &SpectralData,
    eos: &EquationOfState,
    k: usize,
    rng: &mut impl Rng,
) -> Result<EnsembleState> {
    if k == 0 || k > spectral.k() {
        return Err(Error::Domain(format!("ensemble size must lie in 1..={}, got {k}", spectral.k())));
    }
    let u = haar_unitary(k, rng);
    let n = spectral.grid.n_points();
    let psi: Vec<Vec<Complex64>> = (0..k)
        .map(|i| (0..n).map(|j| (0..k).map(|m| u[(i, m)] * spectral.psi[m][j]).sum()).collect())
        .collect();
    let (lo, hi) = (spectral.mu[0] - 2.0, spectral.mu[k - 1] + 2.0);
    let scale: f64 = 2.0 * (1.0 - rng.random::<f64>());
    let lambda = (0..k)
        .map(|_| eos.f(rng.random_range(lo..hi)).map(|x| x * scale))
        .collect::<Result<Vec<_>>>()?;
    EnsembleState::new(&spectral.grid, psi, lambda)
}

/// `H_C` of an ensemble with the Fermi-level shift used in the bound.
pub fn shifted_energy_casimir(
    state: &EnsembleState,
    grid: &GridSpec,
    eos: &EquationOfState,
    sigma0: f64,
) -> Result<f64> {
    Ok(energy_casimir(state, grid, eos)? + sigma0 * state.total_charge())
}
