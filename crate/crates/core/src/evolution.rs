//! Time integration of `i ∂ₜψₖ = (−Δ + V)ψₖ`, `−ΔV = Σ λₖ|ψₖ|²`.
//!
//! Each step is Crank-Nicolson with a frozen midpoint potential. The midpoint
//! potential is predicted from a half step under the current potential, then
//! refined by fixed-point sweeps on `V((ψⁿ + ψⁿ⁺¹)/2)`. With a common real
//! potential every state evolves under the same unitary, so masses and mutual
//! orthogonality are kept to roundoff.

use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::casimir::EquationOfState;
use crate::error::{check_len, Error, Result};
use crate::grid::{grad_norm_sq, inner, poisson_solve, ComplexField, FieldValue, GridSpec, RealField};
use crate::operator::Hamiltonian;
use crate::steady_state::SteadyState;

/// Orthonormality defect above which a run is flagged.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Finitely many tracked orthonormal states with occupations; all untracked
/// states carry zero occupation.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub psi: Vec<ComplexField>,
    pub lambda: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParts {
    /// `Σ λₖ ‖∇ψₖ‖²`
    pub kinetic: f64,
    /// `½‖∇V‖²`
    pub field: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.kinetic + self.field
    }
}

fn density_of<T: FieldValue>(n_points: usize, psi: &[&[T]], lambda: &[f64]) -> RealField {
    let mut n = vec![0.0; n_points];
    for (l, p) in lambda.iter().zip(psi) {
        if *l == 0.0 {
            continue;
        }
        for (nj, z) in n.iter_mut().zip(p.iter()) {
            *nj += l * z.abs2();
        }
    }
    n
}

/// Kinetic and field energy of an ensemble given as borrowed fields.
pub fn ensemble_energy<T: FieldValue>(grid: &GridSpec, psi: &[&[T]], lambda: &[f64]) -> Result<EnergyParts> {
    check_len(psi.len(), lambda.len())?;
    let mut kinetic = 0.0;
    for (l, p) in lambda.iter().zip(psi) {
        check_len(grid.n_points(), p.len())?;
        if *l != 0.0 {
            kinetic += l * grad_norm_sq(grid, p)?;
        }
    }
    let v = poisson_solve(grid, &density_of(grid.n_points(), psi, lambda))?;
    Ok(EnergyParts { kinetic, field: 0.5 * grad_norm_sq(grid, &v)? })
}

impl EnsembleState {
    pub fn new(grid: &GridSpec, psi: Vec<ComplexField>, lambda: Vec<f64>) -> Result<Self> {
        check_len(psi.len(), lambda.len())?;
        for p in &psi {
            check_len(grid.n_points(), p.len())?;
        }
        if let Some(l) = lambda.iter().find(|&&l| !(l.is_finite() && l >= 0.0)) {
            return Err(Error::Domain(format!("occupations must be nonnegative, got {l}")));
        }
        let state = Self { psi, lambda, t: 0.0 };
        let defect = state.orthonormality_defect(grid);
        if defect > ORTHONORMALITY_TOL {
            return Err(Error::Domain(format!("states are not orthonormal (defect {defect:e})")));
        }
        Ok(state)
    }

    /// Steady ensemble `(ψ₀ₖ, λ₀ₖ)` followed by `buffer` further eigenfields of
    /// `−Δ + V₀` with zero occupation.
    pub fn from_steady(steady: &SteadyState, buffer: usize) -> Result<Self> {
        let grid = &steady.grid;
        let k = steady.lambda0.len();
        let total = (k + buffer).min(grid.n_points());
        let spectral = if total == k {
            steady.spectral.clone()
        } else {
            Hamiltonian::new(grid, &steady.potential)?.eigensolve(total)?
        };
        let psi = spectral
            .psi
            .iter()
            .map(|p| p.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        let mut lambda = steady.lambda0.clone();
        lambda.resize(total, 0.0);
        Self::new(grid, psi, lambda)
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    fn fields(&self) -> Vec<&[Complex64]> {
        self.psi.iter().map(Vec::as_slice).collect()
    }

    pub fn total_charge(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Largest `|‖ψₖ‖² − 1|`.
    pub fn mass_deviation(&self, grid: &GridSpec) -> f64 {
        let h = grid.spacing();
        self.psi
            .iter()
            .map(|p| (h * p.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self, grid: &GridSpec) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.len() {
            for j in 0..=i {
                let g = inner(grid, &self.psi[i], &self.psi[j]).unwrap_or(Complex64::new(f64::NAN, 0.0));
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }
}

/// `n = Σ λₖ|ψₖ|²`.
pub fn density(state: &EnsembleState, grid: &GridSpec) -> RealField {
    density_of(grid.n_points(), &state.fields(), &state.lambda)
}

/// Dirichlet potential generated by the ensemble density.
pub fn potential(state: &EnsembleState, grid: &GridSpec) -> Result<RealField> {
    poisson_solve(grid, &density(state, grid))
}

/// `H = Σ λₖ‖∇ψₖ‖² + ½‖∇V‖²`.
pub fn energy(state: &EnsembleState, grid: &GridSpec) -> Result<f64> {
    Ok(ensemble_energy(grid, &state.fields(), &state.lambda)?.total())
}

/// `H_C = Σ F*(−λₖ) + H`.
pub fn energy_casimir(state: &EnsembleState, grid: &GridSpec, eos: &EquationOfState) -> Result<f64> {
    Ok(eos.casimir_sum(&state.lambda)? + energy(state, grid)?)
}

/// `(I + i·dt/2·H_V)` factored once and applied to any number of states.
struct CrankNicolson {
    diag: Vec<f64>,
    off: f64,
    half_dt: f64,
    upper: Vec<Complex64>,
    pivot_inv: Vec<Complex64>,
}

impl CrankNicolson {
    fn new(grid: &GridSpec, v: &[f64], dt: f64) -> Result<Self> {
        let h2 = grid.spacing().powi(2);
        let diag: Vec<f64> = v.iter().map(|vj| 2.0 / h2 + vj).collect();
        let off = -1.0 / h2;
        let half_dt = 0.5 * dt;
        let b = Complex64::new(0.0, half_dt * off);
        let n = diag.len();
        let mut upper = vec![Complex64::new(0.0, 0.0); n];
        let mut pivot_inv = vec![Complex64::new(0.0, 0.0); n];
        let mut prev_upper = Complex64::new(0.0, 0.0);
        for j in 0..n {
            // |1 + i·a| > 2|b|: the system is strictly diagonally dominant
            let pivot = Complex64::new(1.0, half_dt * diag[j]) - b * prev_upper;
            if pivot.norm() < 1e-300 || !pivot.is_finite() {
                return Err(Error::Numerical("Crank-Nicolson factorization broke down".into()));
            }
            pivot_inv[j] = pivot.inv();
            upper[j] = b * pivot_inv[j];
            prev_upper = upper[j];
        }
        Ok(Self { diag, off, half_dt, upper, pivot_inv })
    }

    fn propagate(&self, psi: &[Complex64]) -> ComplexField {
        let n = psi.len();
        let i_half = Complex64::new(0.0, self.half_dt);
        let b = i_half * self.off;
        let mut y = Vec::with_capacity(n);
        let mut prev = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let left = if j > 0 { psi[j - 1] } else { Complex64::new(0.0, 0.0) };
            let right = if j + 1 < n { psi[j + 1] } else { Complex64::new(0.0, 0.0) };
            let rhs = psi[j] - i_half * self.diag[j] * psi[j] - b * (left + right);
            prev = (rhs - b * prev) * self.pivot_inv[j];
            y.push(prev);
        }
        for j in (0..n.saturating_sub(1)).rev() {
            let next = y[j + 1];
            y[j] -= self.upper[j] * next;
        }
        y
    }

    fn propagate_all(&self, psi: &[ComplexField]) -> Vec<ComplexField> {
        psi.par_iter().map(|p| self.propagate(p)).collect()
    }
}

fn midpoint_potential(grid: &GridSpec, a: &[ComplexField], b: &[ComplexField], lambda: &[f64]) -> Result<RealField> {
    let mut n = vec![0.0; grid.n_points()];
    for ((l, p), q) in lambda.iter().zip(a).zip(b) {
        if *l == 0.0 {
            continue;
        }
        for ((nj, x), y) in n.iter_mut().zip(p).zip(q) {
            *nj += l * (0.5 * (x + y)).norm_sqr();
        }
    }
    poisson_solve(grid, &n)
}

/// Advances the ensemble by `dt` (negative `dt` runs backwards in time).
pub fn step(state: &EnsembleState, dt: f64, grid: &GridSpec, midpoint_sweeps: usize) -> Result<EnsembleState> {
    if !(dt.is_finite() && dt != 0.0) {
        return Err(Error::Domain(format!("time step must be finite and nonzero, got {dt}")));
    }
    let v_now = potential(state, grid)?;
    let predictor = CrankNicolson::new(grid, &v_now, 0.5 * dt)?.propagate_all(&state.psi);
    let v_half = poisson_solve(grid, &density_of(grid.n_points(), &predictor.iter().map(Vec::as_slice).collect::<Vec<_>>(), &state.lambda))?;
    let mut next = CrankNicolson::new(grid, &v_half, dt)?.propagate_all(&state.psi);
    for _ in 0..midpoint_sweeps {
        let v_mid = midpoint_potential(grid, &state.psi, &next, &state.lambda)?;
        next = CrankNicolson::new(grid, &v_mid, dt)?.propagate_all(&state.psi);
    }
    Ok(EnsembleState { psi: next, lambda: state.lambda.clone(), t: state.t + dt })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionOptions {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub sample_every: usize,
    pub midpoint_sweeps: usize,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { dt: 1e-3, t_final: 10.0, sample_every: 10, midpoint_sweeps: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub mass_dev: f64,
    #[serde(rename = "H")]
    pub energy: f64,
    #[serde(rename = "H_C")]
    pub energy_casimir: f64,
    /// `½‖∇V(t) − ∇V₀‖²` against the reference potential, when given.
    pub dist: Option<f64>,
    pub potential: RealField,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub grid: GridSpec,
    pub eos: EquationOfState,
    /// `Σ λₖ` of the propagated ensemble.
    pub total_charge: f64,
    pub samples: Vec<Sample>,
    /// Largest single-step change of any `‖ψₖ‖²`.
    pub max_step_mass_change: f64,
    pub max_orthonormality_defect: f64,
    pub orthonormal: bool,
}

impl EvolutionTrace {
    /// `max_t |H(t) − H(0)|` and `max_t |H_C(t) − H_C(0)|`.
    pub fn drifts(&self) -> (f64, f64) {
        let Some(first) = self.samples.first() else {
            return (0.0, 0.0);
        };
        self.samples.iter().fold((0.0, 0.0), |(a, b), s| {
            (f64::max(a, (s.energy - first.energy).abs()), f64::max(b, (s.energy_casimir - first.energy_casimir).abs()))
        })
    }
}

fn sample(
    state: &EnsembleState,
    grid: &GridSpec,
    eos: &EquationOfState,
    reference: Option<&[f64]>,
) -> Result<Sample> {
    let fields = state.fields();
    let parts = ensemble_energy(grid, &fields, &state.lambda)?;
    let energy = parts.total();
    let v = potential(state, grid)?;
    let dist = match reference {
        Some(v0) => {
            check_len(grid.n_points(), v0.len())?;
            let diff: RealField = v.iter().zip(v0).map(|(a, b)| a - b).collect();
            Some(0.5 * grad_norm_sq(grid, &diff)?)
        }
        None => None,
    };
    let s = Sample {
        t: state.t,
        mass_dev: state.mass_deviation(grid),
        energy,
        energy_casimir: eos.casimir_sum(&state.lambda)? + energy,
        dist,
        potential: v,
    };
    if !(s.energy.is_finite() && s.energy_casimir.is_finite() && s.mass_dev.is_finite()) {
        return Err(Error::Numerical(format!("non-finite diagnostics at t = {}", s.t)));
    }
    Ok(s)
}

/// Propagates `initial` to `opts.t_final`, sampling every `opts.sample_every`
/// steps and at the final time.
pub fn evolve(
    initial: &EnsembleState,
    grid: &GridSpec,
    eos: &EquationOfState,
    opts: &EvolutionOptions,
    reference: Option<&[f64]>,
) -> Result<(EvolutionTrace, EnsembleState)> {
    if !(opts.dt.is_finite() && opts.dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {}", opts.dt)));
    }
    if !(opts.t_final.is_finite() && opts.t_final >= 0.0) {
        return Err(Error::Domain(format!("T must be nonnegative, got {}", opts.t_final)));
    }
    if opts.sample_every == 0 {
        return Err(Error::Domain("sample_every must be at least 1".into()));
    }
    let steps = (opts.t_final / opts.dt).round() as usize;
    let t0 = initial.t;
    let mut state = initial.clone();
    let mut samples = vec![sample(&state, grid, eos, reference)?];
    let mut max_defect = state.orthonormality_defect(grid);
    let mut max_step_mass = 0.0_f64;
    let h = grid.spacing();
    let masses = |s: &EnsembleState| -> Vec<f64> {
        s.psi.iter().map(|p| h * p.iter().map(|z| z.norm_sqr()).sum::<f64>()).collect()
    };
    let mut before = masses(&state);
    for i in 1..=steps {
        let mut next = step(&state, opts.dt, grid, opts.midpoint_sweeps)?;
        // accumulate t from the step count so sample times do not drift
        next.t = t0 + i as f64 * opts.dt;
        let after = masses(&next);
        for (a, b) in after.iter().zip(&before) {
            max_step_mass = max_step_mass.max((a - b).abs());
        }
        before = after;
        state = next;
        if i % opts.sample_every == 0 || i == steps {
            samples.push(sample(&state, grid, eos, reference)?);
            max_defect = max_defect.max(state.orthonormality_defect(grid));
        }
    }
    let trace = EvolutionTrace {
        grid: *grid,
        eos: *eos,
        total_charge: initial.total_charge(),
        samples,
        max_step_mass_change: max_step_mass,
        max_orthonormality_defect: max_defect,
        orthonormal: max_defect <= ORTHONORMALITY_TOL,
    };
    Ok((trace, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbKind {
    None,
    Phase,
    Occupation,
    Mix,
}

impl FromStr for PerturbKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "phase" => Ok(Self::Phase),
            "occupation" => Ok(Self::Occupation),
            "mix" => Ok(Self::Mix),
            other => Err(Error::Config(format!(
                "unknown perturbation '{other}' (none | phase | occupation | mix)"
            ))),
        }
    }
}

/// Cayley transform `(I − A/2)⁻¹(I + A/2)` of an antisymmetric matrix.
fn cayley(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let lhs = &id - a * 0.5;
    let rhs = &id + a * 0.5;
    lhs.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular Cayley transform".into()))
}

/// Perturbed copy of `base`:
/// - `Phase`: `ψₖ ← e^{iε(x/L)²}ψₖ`;
/// - `Occupation`: `λₖ ← max(0, λₖ(1 + εrₖ))` with `rₖ ~ U[−1, 1]`;
/// - `Mix`: rows of `ψ` rotated by the Cayley transform of `ε(S − Sᵀ)`, `Sᵢⱼ ~ U[−1, 1]`.
///
/// Random draws come from a ChaCha stream seeded with `seed`.
pub fn perturb(
    base: &EnsembleState,
    grid: &GridSpec,
    kind: PerturbKind,
    eps: f64,
    seed: u64,
) -> Result<EnsembleState> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Domain(format!("perturbation amplitude must be nonnegative, got {eps}")));
    }
    let mut out = base.clone();
    if eps == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        PerturbKind::None => {}
        PerturbKind::Phase => {
            let length = grid.length();
            let phase: Vec<Complex64> =
                grid.nodes().iter().map(|x| Complex64::from_polar(1.0, eps * (x / length).powi(2))).collect();
            for p in &mut out.psi {
                for (z, w) in p.iter_mut().zip(&phase) {
                    *z *= w;
                }
            }
        }
        PerturbKind::Occupation => {
            for l in &mut out.lambda {
                let r: f64 = rng.random_range(-1.0..=1.0);
                *l = (*l * (1.0 + eps * r)).max(0.0);
            }
        }
        PerturbKind::Mix => {
            let k = base.len();
            let s = DMatrix::<f64>::from_fn(k, k, |_, _| rng.random_range(-1.0..=1.0));
            let u = cayley(&((&s - s.transpose()) * eps))?;
            for (i, row) in out.psi.iter_mut().enumerate() {
                for (j, z) in row.iter_mut().enumerate() {
                    *z = (0..k).map(|m| base.psi[m][j] * u[(i, m)]).sum();
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::steady_state::{solve_steady, SolverOptions};

    fn free_state(grid: &GridSpec, k: usize, lambda: f64) -> EnsembleState {
        let spec = Hamiltonian::free(grid).eigensolve(k).unwrap();
        let psi = vec![spec.psi[k - 1].iter().map(|&x| Complex64::new(x, 0.0)).collect()];
        EnsembleState::new(grid, psi, vec![lambda]).unwrap()
    }

    fn small_steady() -> SteadyState {
        let g = GridSpec::new(8.0, 64).unwrap();
        solve_steady(&EquationOfState::boltzmann(1.0).unwrap(), 1.0, &g, &SolverOptions::new(12)).unwrap()
    }

    #[test]
    fn empty_and_single_state_densities() {
        let g = GridSpec::new(3.0, 40).unwrap();
        let s = free_state(&g, 2, 0.0);
        assert!(density(&s, &g).iter().all(|&x| x == 0.0));
        assert!(potential(&s, &g).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(energy(&s, &g).unwrap(), 0.0);
        let eos = EquationOfState::fermi_dirac(1.0, 1.0).unwrap();
        assert_eq!(energy_casimir(&s, &g, &eos).unwrap(), 0.0);
        let s = free_state(&g, 2, 1.0);
        let mass: f64 = g.spacing() * density(&s, &g).iter().sum::<f64>();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weak_coupling_energy_is_the_eigenvalue() {
        let g = GridSpec::new(3.0, 40).unwrap();
        let s = free_state(&g, 3, 1e-8);
        let e = energy(&s, &g).unwrap() / 1e-8;
        assert!((e - g.free_eigenvalue(3)).abs() < 1e-6 * g.free_eigenvalue(3));
    }

    #[test]
    fn field_energy_two_quadratic_forms_agree() {
        let g = GridSpec::new(5.0, 50).unwrap();
        let steady = small_steady();
        let st = EnsembleState::from_steady(&steady, 2).unwrap();
        let _ = g;
        let g = steady.grid;
        let n = density(&st, &g);
        let v = potential(&st, &g).unwrap();
        let a = crate::grid::inner_real(&g, &n, &v).unwrap();
        let b = grad_norm_sq(&g, &v).unwrap();
        assert!((a - b).abs() < 1e-10 * b.max(1.0));
    }

    #[test]
    fn casimir_energy_is_phase_invariant() {
        let steady = small_steady();
        let g = steady.grid;
        let st = EnsembleState::from_steady(&steady, 0).unwrap();
        let mut rotated = st.clone();
        for p in &mut rotated.psi {
            for z in p.iter_mut() {
                *z *= Complex64::from_polar(1.0, 0.7);
            }
        }
        let a = energy_casimir(&st, &g, &steady.eos).unwrap();
        let b = energy_casimir(&rotated, &g, &steady.eos).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs());
        assert!((a - steady.certificates.phi_value).abs() < 1e-8);
    }

    #[test]
    fn free_eigenstate_acquires_phase() {
        let g = GridSpec::new(4.0, 64).unwrap();
        let mut state = free_state(&g, 1, 0.0);
        let start = state.psi[0].clone();
        let dt = 1e-3;
        for _ in 0..1000 {
            state = step(&state, dt, &g, 2).unwrap();
        }
        let mu = g.free_eigenvalue(1);
        // Crank-Nicolson phase per step: the Cayley factor of e^{−iμdt}
        let z = Complex64::new(1.0, -0.5 * dt * mu) / Complex64::new(1.0, 0.5 * dt * mu);
        let total = z.powu(1000);
        let err = state.psi[0].iter().zip(&start).map(|(a, b)| (a - b * total).norm()).fold(0.0, f64::max);
        let peak = start.iter().map(|b| b.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10 * peak, "{err}");
        assert!(state.mass_deviation(&g) < 1e-10);
        // and the discrete phase approximates e^{−iμt}
        assert!((total - Complex64::from_polar(1.0, -mu)).norm() < 1e-5);
    }

    #[test]
    fn time_reversal() {
        let steady = small_steady();
        let g = steady.grid;
        let base = EnsembleState::from_steady(&steady, 2).unwrap();
        let s0 = perturb(&base, &g, PerturbKind::Mix, 0.2, 3).unwrap();
        let s1 = step(&s0, 1e-3, &g, 2).unwrap();
        let back = step(&s1, -1e-3, &g, 2).unwrap();
        let err = back
            .psi
            .iter()
            .zip(&s0.psi)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(back.t.abs() < 1e-15);
    }

    #[test]
    fn step_preserves_mass_and_orthonormality() {
        let steady = small_steady();
        let g = steady.grid;
        let base = EnsembleState::from_steady(&steady, 4).unwrap();
        let s0 = perturb(&base, &g, PerturbKind::Phase, 0.5, 0).unwrap();
        let s1 = step(&s0, 1e-3, &g, 2).unwrap();
        assert!(s1.mass_deviation(&g) < 1e-12);
        assert!(s1.orthonormality_defect(&g) < 1e-10);
        assert!(step(&s0, 0.0, &g, 2).is_err());
    }

    #[test]
    fn steady_ensemble_is_stationary() {
        let steady = small_steady();
        let g = steady.grid;
        let st = EnsembleState::from_steady(&steady, 2).unwrap();
        let n0 = density(&st, &g);
        let v = potential(&st, &g).unwrap();
        let dv = v.iter().zip(&steady.potential).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dv < 1e-8);
        let opts = EvolutionOptions { dt: 1e-3, t_final: 0.5, sample_every: 100, midpoint_sweeps: 2 };
        let (trace, last) = evolve(&st, &g, &steady.eos, &opts, Some(&steady.potential)).unwrap();
        let n1 = density(&last, &g);
        let dn = n1.iter().zip(&n0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dn < 1e-6, "{dn}");
        assert!(trace.samples.iter().all(|s| s.dist.unwrap() < 1e-12));
        assert!(trace.orthonormal);
        assert!(trace.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert!((trace.samples.last().unwrap().t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn perturbations_stay_in_state_space() {
        let steady = small_steady();
        let g = steady.grid;
        let base = EnsembleState::from_steady(&steady, 4).unwrap();
        for kind in [PerturbKind::Phase, PerturbKind::Occupation, PerturbKind::Mix] {
            assert_eq!(perturb(&base, &g, kind, 0.0, 1).unwrap(), base);
            let p = perturb(&base, &g, kind, 0.1, 1).unwrap();
            assert!(p.orthonormality_defect(&g) < 1e-12, "{kind:?}");
            assert!(p.lambda.iter().all(|&l| l >= 0.0));
        }
        let mix = perturb(&base, &g, PerturbKind::Mix, 0.1, 1).unwrap();
        assert_eq!(mix.total_charge(), base.total_charge());
        // a common phase multiplier leaves the density alone but not the kinetic energy
        let phase = perturb(&base, &g, PerturbKind::Phase, 0.3, 1).unwrap();
        let dn = density(&phase, &g).iter().zip(density(&base, &g)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dn < 1e-14);
        assert!(energy(&phase, &g).unwrap() > energy(&base, &g).unwrap());
        // identical seeds give identical draws
        assert_eq!(
            perturb(&base, &g, PerturbKind::Occupation, 0.1, 9).unwrap(),
            perturb(&base, &g, PerturbKind::Occupation, 0.1, 9).unwrap()
        );
        assert!("swap".parse::<PerturbKind>().is_err());
        assert!(perturb(&base, &g, PerturbKind::Mix, -1.0, 1).is_err());
    }
}
