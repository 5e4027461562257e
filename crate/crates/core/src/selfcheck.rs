//! Built-in invariant suites on a small grid, run by `sps selfcheck`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::casimir::{validate_casimir_class, EquationOfState};
use crate::error::Result;
use crate::evolution::{evolve, perturb, step, EnsembleState, EvolutionOptions, PerturbKind};
use crate::grid::GridSpec;
use crate::operator::Hamiltonian;
use crate::stability::{conjugacy_gap, jensen_check, random_ensemble, stability_audit, trace_inequality_check};
use crate::steady_state::{solve_steady, SolverOptions, SteadyState};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((pass, detail)) => CheckResult { name, pass, detail },
        Err(e) => CheckResult { name, pass: false, detail: format!("error: {e}") },
    }
}

fn families() -> Result<Vec<EquationOfState>> {
    Ok(vec![
        EquationOfState::boltzmann(1.0)?,
        EquationOfState::fermi_dirac(1.0, 1.0)?,
        EquationOfState::power_cutoff(2.0, 1.5)?,
    ])
}

fn free_spectrum(grid: &GridSpec) -> Result<(bool, String)> {
    let spec = Hamiltonian::free(grid).eigensolve(16)?;
    let err = spec
        .mu
        .iter()
        .enumerate()
        .map(|(i, m)| ((m - grid.free_eigenvalue(i + 1)) / grid.free_eigenvalue(i + 1)).abs())
        .fold(0.0, f64::max);
    Ok((err <= 1e-10, format!("max relative error {err:.2e}")))
}

fn dense_oracle(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let n = grid.n_points();
    let v: Vec<f64> = (0..n).map(|_| 5.0 * rng.random::<f64>()).collect();
    let h = Hamiltonian::new(grid, &v)?;
    let (d, e) = (h.diagonal(), h.off_diagonal());
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { d[i] } else if i.abs_diff(j) == 1 { e } else { 0.0 });
    let mut dense: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    dense.sort_by(f64::total_cmp);
    let spec = h.eigensolve(8)?;
    let err = spec.mu.iter().zip(&dense).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
    Ok((err <= 1e-9, format!("max relative error {err:.2e}")))
}

fn casimir_class() -> Result<(bool, String)> {
    let mut all = true;
    let mut parts = Vec::new();
    for eos in families()? {
        let r = validate_casimir_class(&eos);
        all &= r.passes();
        parts.push(format!("{}: {}", eos.describe(), if r.passes() { "ok" } else { "FAIL" }));
    }
    Ok((all, parts.join("; ")))
}

fn conjugacy(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = f64::INFINITY;
    let mut worst_eq = 0.0_f64;
    for eos in families()? {
        for _ in 0..300 {
            let mu = rng.random_range(-3.0..6.0);
            let lambda = 4.0 * rng.random::<f64>();
            worst = worst.min(conjugacy_gap(&eos, lambda, mu)?);
            let on_graph = eos.f(mu)?;
            worst_eq = worst_eq.max(conjugacy_gap(&eos, on_graph, mu)?.abs());
        }
    }
    Ok((worst >= -1e-10 && worst_eq <= 1e-8, format!("min gap {worst:.2e}, max gap on graph {worst_eq:.2e}")))
}

fn jensen(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let n = grid.n_points();
    let v = grid.sample(|x| 0.2 * x);
    let eos = EquationOfState::boltzmann(1.0)?;
    let spec = Hamiltonian::new(grid, &v)?.eigensolve(n)?;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let coeffs: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * (-(k as f64) / 4.0).exp())
            .collect();
        let mut psi = vec![Complex64::new(0.0, 0.0); n];
        for (c, phi) in coeffs.iter().zip(&spec.psi) {
            for (z, p) in psi.iter_mut().zip(phi) {
                *z += c * p;
            }
        }
        let norm = crate::grid::norm_l2(grid, &psi)?;
        psi.iter_mut().for_each(|z| *z /= norm);
        let (l, r) = jensen_check(&psi, &v, &eos, grid, n)?;
        worst = worst.max(l - r);
    }
    Ok((worst <= 1e-10, format!("max lhs - rhs {worst:.2e}")))
}

fn trace_inequality(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let n = grid.n_points();
    let v = grid.sample(|x| 0.1 * x * x);
    let eos = EquationOfState::fermi_dirac(1.0, 1.0)?;
    let spec = Hamiltonian::new(grid, &v)?.eigensolve(n)?;
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let st = random_ensemble(&spec, &eos, 12, rng)?;
        worst = worst.min(trace_inequality_check(&st, &v, &eos, grid, n)?.margin);
    }
    let psi = spec.psi.iter().map(|p| p.iter().map(|&x| Complex64::new(x, 0.0)).collect()).collect();
    let eq = EnsembleState::new(grid, psi, spec.occupations(0.0, &eos)?)?;
    let eq_margin = trace_inequality_check(&eq, &v, &eos, grid, n)?.margin;
    Ok((
        worst >= -1e-10 && eq_margin.abs() <= 1e-8,
        format!("min margin {worst:.2e}, equality case {eq_margin:.2e}"),
    ))
}

fn steady(grid: &GridSpec) -> Result<SteadyState> {
    solve_steady(&EquationOfState::boltzmann(1.0)?, 1.0, grid, &SolverOptions::new(16))
}

fn duality(s: &SteadyState) -> (bool, String) {
    let c = &s.certificates;
    let gap = (c.phi_value - c.hc_value).abs();
    (
        c.poisson_residual_inf < 1e-8 && c.charge_residual < 1e-10 && gap <= 1e-8,
        format!(
            "poisson {:.1e}, charge {:.1e}, |Phi - H_C| {gap:.1e}, {} iterations",
            c.poisson_residual_inf, c.charge_residual, c.iterations
        ),
    )
}

fn propagator(s: &SteadyState) -> Result<(bool, String)> {
    let g = s.grid;
    let base = EnsembleState::from_steady(s, 4)?;
    let p = perturb(&base, &g, PerturbKind::Mix, 0.1, 2)?;
    let fwd = step(&p, 1e-3, &g, 2)?;
    let mass = fwd.mass_deviation(&g);
    let back = step(&fwd, -1e-3, &g, 2)?;
    let rev = back
        .psi
        .iter()
        .zip(&p.psi)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm()))
        .fold(0.0, f64::max);
    Ok((mass <= 1e-12 && rev <= 1e-9, format!("mass deviation {mass:.1e}, time reversal {rev:.1e}")))
}

fn audit(s: &SteadyState) -> Result<(bool, String)> {
    let g = s.grid;
    let base = EnsembleState::from_steady(s, 4)?;
    let opts = EvolutionOptions { dt: 1e-3, t_final: 0.5, sample_every: 50, midpoint_sweeps: 2 };
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [PerturbKind::None, PerturbKind::Occupation, PerturbKind::Mix] {
        let p = perturb(&base, &g, kind, 0.05, 4)?;
        let (trace, _) = evolve(&p, &g, &s.eos, &opts, Some(&s.potential))?;
        let r = stability_audit(&trace, s, crate::stability::DEFAULT_AUDIT_TOL)?;
        pass &= r.pass && trace.orthonormal;
        parts.push(format!("{kind:?}: B={:.2e} margin={:.2e}", r.bound, r.margin));
    }
    Ok((pass, parts.join("; ")))
}

/// Runs every suite and reports one line per check.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new(8.0, 64).expect("valid selfcheck grid");
    let mut out = vec![
        check("free-spectrum", free_spectrum(&GridSpec::new(8.0, 63).expect("valid grid"))),
        check("dense-eigen-oracle", dense_oracle(&grid, &mut rng)),
        check("casimir-class", casimir_class()),
        check("conjugacy", conjugacy(&mut rng)),
        check("jensen", jensen(&GridSpec::new(4.0, 48).expect("valid grid"), &mut rng)),
        check("trace-inequality", trace_inequality(&GridSpec::new(4.0, 48).expect("valid grid"), &mut rng)),
    ];
    match steady(&grid) {
        Ok(s) => {
            out.push(check("steady-duality", Ok(duality(&s))));
            out.push(check("propagator", propagator(&s)));
            out.push(check("stability-audit", audit(&s)));
        }
        Err(e) => out.push(CheckResult { name: "steady-duality", pass: false, detail: format!("error: {e}") }),
    }
    out
}
