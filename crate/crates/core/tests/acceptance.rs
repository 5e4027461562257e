//! Acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sps_core::evolution::{
    density, evolve, perturb, EnsembleState, EvolutionOptions, EvolutionTrace, PerturbKind,
};
use sps_core::stability::{
    conjugacy_gap, jensen_check, random_ensemble, stability_audit, trace_inequality_check, DEFAULT_AUDIT_TOL,
};
use sps_core::steady_state::{phi_eval, solve_steady, DualPoint, SolverOptions, SteadyState, PHI_ROUNDOFF};
use sps_core::{EquationOfState, GridSpec, Hamiltonian};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn families() -> Vec<EquationOfState> {
    vec![
        EquationOfState::boltzmann(1.0).unwrap(),
        EquationOfState::fermi_dirac(1.0, 1.0).unwrap(),
        EquationOfState::power_cutoff(2.0, 1.0).unwrap(),
    ]
}

// cutoff placed high enough that sampled spectra are partly occupied
fn spectral_families() -> Vec<EquationOfState> {
    vec![
        EquationOfState::boltzmann(1.0).unwrap(),
        EquationOfState::fermi_dirac(1.0, 1.0).unwrap(),
        EquationOfState::power_cutoff(30.0, 1.5).unwrap(),
    ]
}

fn random_potential(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let amp: f64 = rng.random_range(0.0..3.0);
    let modes: Vec<(f64, f64)> = (1..=4).map(|m| (m as f64, rng.random_range(0.0..1.0))).collect();
    let l = grid.length();
    grid.sample(|x| {
        let s: f64 = modes.iter().map(|(m, c)| c * (m * std::f64::consts::PI * x / l).sin().powi(2)).sum();
        amp * s
    })
}

fn spectral_oracle() -> Outcome {
    let start = Instant::now();
    let g = GridSpec::new(8.0, 63).unwrap();
    let spec = Hamiltonian::free(&g).eigensolve(16).unwrap();
    let free_err = spec
        .mu
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let exact = 4.0 * ((i + 1) as f64 * std::f64::consts::PI / 128.0).sin().powi(2) / g.spacing().powi(2);
            ((m - exact) / exact).abs()
        })
        .fold(0.0, f64::max);

    let g = GridSpec::new(8.0, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut dense_err = 0.0_f64;
    for _ in 0..5 {
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
        let h2 = g.spacing().powi(2);
        let m = DMatrix::from_fn(64, 64, |i, j| {
            if i == j {
                2.0 / h2 + v[i]
            } else if i.abs_diff(j) == 1 {
                -1.0 / h2
            } else {
                0.0
            }
        });
        let mut dense: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        let spec = Hamiltonian::new(&g, &v).unwrap().eigensolve(64).unwrap();
        for (a, b) in spec.mu.iter().zip(&dense) {
            dense_err = dense_err.max(((a - b) / b).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        free_err <= 1e-10 && dense_err <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("closed form rel err {free_err:.1e}, dense oracle rel err {dense_err:.1e}, {elapsed:.2?}"),
    )
}

fn conjugacy() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::INFINITY;
    let mut worst_eq = 0.0_f64;
    for eos in families() {
        for _ in 0..10_000 {
            let lambda = 10f64.powf(rng.random_range(-8.0..1.7));
            let mu = rng.random_range(-5.0..10.0);
            worst = worst.min(conjugacy_gap(&eos, lambda, mu).unwrap());
        }
        for _ in 0..200 {
            let mu = rng.random_range(-5.0..1.9);
            worst_eq = worst_eq.max(conjugacy_gap(&eos, eos.f(mu).unwrap(), mu).unwrap().abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst >= -1e-10 && worst_eq <= 1e-8 && elapsed < Duration::from_secs(5),
        format!("min gap {worst:.2e}, max gap at lambda = f(mu) {worst_eq:.2e}, {elapsed:.2?}"),
    )
}

fn jensen() -> Outcome {
    let g = GridSpec::new(8.0, 64).unwrap();
    let n = g.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fams = spectral_families();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_eq = 0.0_f64;
    for i in 0..100 {
        let eos = &fams[i % 3];
        let v = random_potential(&g, &mut rng);
        let spec = Hamiltonian::new(&g, &v).unwrap().eigensolve(n).unwrap();
        let mut psi = vec![Complex64::new(0.0, 0.0); n];
        for (k, phi) in spec.psi.iter().enumerate() {
            let c = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * (-(k as f64) / 4.0).exp();
            for (z, p) in psi.iter_mut().zip(phi) {
                *z += c * p;
            }
        }
        let norm = sps_core::grid::norm_l2(&g, &psi).unwrap();
        psi.iter_mut().for_each(|z| *z /= norm);
        let (l, r) = jensen_check(&psi, &v, eos, &g, n).unwrap();
        worst = worst.max(l - r);
        if i < 10 {
            let eig: Vec<Complex64> = spec.psi[i].iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let (l, r) = jensen_check(&eig, &v, eos, &g, n).unwrap();
            worst_eq = worst_eq.max((l - r).abs());
        }
    }
    outcome(
        worst <= 1e-10 && worst_eq <= 1e-8,
        format!("max lhs - rhs {worst:.2e} over 100 states, eigenstate |lhs - rhs| {worst_eq:.2e}"),
    )
}

fn trace_inequality() -> Outcome {
    let g = GridSpec::new(8.0, 64).unwrap();
    let n = g.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fams = spectral_families();
    let mut worst = f64::INFINITY;
    let mut worst_eq = 0.0_f64;
    for i in 0..200 {
        let eos = &fams[i % 3];
        let v = random_potential(&g, &mut rng);
        let spec = Hamiltonian::new(&g, &v).unwrap().eigensolve(n).unwrap();
        let k = rng.random_range(1..=32);
        let st = random_ensemble(&spec, eos, k, &mut rng).unwrap();
        worst = worst.min(trace_inequality_check(&st, &v, eos, &g, n).unwrap().margin);
        if i < 6 {
            let psi = spec.psi.iter().map(|p| p.iter().map(|&x| Complex64::new(x, 0.0)).collect()).collect();
            let eq = EnsembleState::new(&g, psi, spec.occupations(0.0, eos).unwrap()).unwrap();
            worst_eq = worst_eq.max(trace_inequality_check(&eq, &v, eos, &g, n).unwrap().margin.abs());
        }
    }
    outcome(
        worst >= -1e-10 && worst_eq <= 1e-8,
        format!("min margin {worst:.2e} over 200 ensembles, equality case |margin| {worst_eq:.2e}"),
    )
}

struct SteadyRun {
    label: String,
    state: SteadyState,
    elapsed: Duration,
    two_start_gap: f64,
    monotone: bool,
}

fn steady_cases() -> Vec<(String, EquationOfState, f64)> {
    vec![
        ("boltzmann(beta=1), Lambda=1".into(), EquationOfState::boltzmann(1.0).unwrap(), 1.0),
        ("fermi-dirac(C=1,eps=1), Lambda=1".into(), EquationOfState::fermi_dirac(1.0, 1.0).unwrap(), 1.0),
        // the cutoff level and σ only enter through s0 − σ, so the number of
        // occupied modes is set by Λ; Λ = 4 occupies three
        ("power-cutoff(s0=2,q=1), Lambda=4".into(), EquationOfState::power_cutoff(2.0, 1.0).unwrap(), 4.0),
    ]
}

fn run_steady(label: String, eos: &EquationOfState, lambda: f64) -> Result<SteadyRun, String> {
    let g = GridSpec::new(8.0, 256).unwrap();
    let opts = SolverOptions::new(24);
    let start = Instant::now();
    let a = solve_steady(eos, lambda, &g, &opts).map_err(|e| format!("{label}: {e}"))?;
    let elapsed = start.elapsed();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bumped = opts.clone();
    let center = rng.random_range(2.0..6.0);
    bumped.initial_potential = Some(g.sample(|x| 3.0 * (-(x - center) * (x - center)).exp()));
    let b = solve_steady(eos, lambda, &g, &bumped).map_err(|e| format!("{label} (bump start): {e}"))?;
    let two_start_gap = a.potential.iter().zip(&b.potential).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let monotone = [&a, &b].iter().all(|s| {
        s.phi_history.windows(2).all(|w| w[1] >= w[0] - PHI_ROUNDOFF * (1.0 + w[0].abs()))
    });
    Ok(SteadyRun { label, state: a, elapsed, two_start_gap, monotone })
}

fn steady_solve(runs: &[Result<SteadyRun, String>]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        match r {
            Ok(r) => {
                let c = &r.state.certificates;
                let occupied = r.state.occupied_modes();
                let ok = c.poisson_residual_inf < 1e-8
                    && c.charge_residual < 1e-10
                    && r.monotone
                    && r.two_start_gap <= 1e-7
                    && r.elapsed < Duration::from_secs(10)
                    && occupied >= 3;
                pass &= ok;
                parts.push(format!(
                    "{}: poisson {:.1e}, charge {:.1e}, two-start {:.1e}, {} occupied, {} iters, {:.2?}{}",
                    r.label,
                    c.poisson_residual_inf,
                    c.charge_residual,
                    r.two_start_gap,
                    occupied,
                    c.iterations,
                    r.elapsed,
                    if r.monotone { "" } else { ", Phi decreased" }
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(e.clone());
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn duality(runs: &[Result<SteadyRun, String>]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        match r {
            Ok(r) => {
                let c = &r.state.certificates;
                let gap = (c.phi_value - c.hc_value).abs();
                pass &= gap <= 1e-8;
                parts.push(format!("{}: |Phi - H_C| = {gap:.1e}", r.label));
            }
            Err(e) => {
                pass = false;
                parts.push(e.clone());
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn propagate(steady: &SteadyState, kind: PerturbKind, eps: f64, dt: f64, t_final: f64) -> (EvolutionTrace, Duration) {
    let g = steady.grid;
    let base = EnsembleState::from_steady(steady, 4).unwrap();
    let initial = perturb(&base, &g, kind, eps, 7).unwrap();
    let opts = EvolutionOptions { dt, t_final, sample_every: 10, midpoint_sweeps: 2 };
    let start = Instant::now();
    let (trace, _) = evolve(&initial, &g, &steady.eos, &opts, Some(&steady.potential)).unwrap();
    (trace, start.elapsed())
}

fn conservation(steady: &SteadyState) -> Outcome {
    let (coarse, _) = propagate(steady, PerturbKind::Mix, 0.1, 1e-3, 10.0);
    let (fine, _) = propagate(steady, PerturbKind::Mix, 0.1, 5e-4, 10.0);
    let (h1, hc1) = coarse.drifts();
    let (h2, hc2) = fine.drifts();
    let (rh, rhc) = (h1 / h2, hc1 / hc2);
    let mass = coarse.max_step_mass_change.max(fine.max_step_mass_change);
    let in_band = |r: f64| (3.5..=4.5).contains(&r);
    outcome(
        mass <= 1e-12 && h1 <= 1e-4 && hc1 <= 1e-4 && in_band(rh) && in_band(rhc),
        format!(
            "step mass dev {mass:.1e}; dt=1e-3: H drift {h1:.2e}, H_C drift {hc1:.2e}; dt=5e-4: {h2:.2e}, {hc2:.2e}; ratios {rh:.3}, {rhc:.3}"
        ),
    )
}

fn stationarity(steady: &SteadyState) -> Outcome {
    let g = steady.grid;
    let mut state = EnsembleState::from_steady(steady, 4).unwrap();
    let n0 = density(&state, &g);
    let opts = EvolutionOptions { dt: 1e-3, t_final: 0.5, sample_every: 500, midpoint_sweeps: 2 };
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        state = evolve(&state, &g, &steady.eos, &opts, None).unwrap().1;
        let n = density(&state, &g);
        worst = worst.max(n.iter().zip(&n0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    outcome(worst <= 1e-6, format!("max |n(t) - n0| over t in [0, {:.1}]: {worst:.2e}", state.t))
}

fn stability(steady: &SteadyState) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [PerturbKind::Phase, PerturbKind::Occupation, PerturbKind::Mix] {
        let mut bounds = Vec::new();
        let mut worst_margin = f64::INFINITY;
        let mut slowest = Duration::ZERO;
        for eps in [0.025, 0.05, 0.1] {
            let (trace, elapsed) = propagate(steady, kind, eps, 1e-3, 10.0);
            let report = stability_audit(&trace, steady, DEFAULT_AUDIT_TOL).unwrap();
            pass &= report.pass && trace.orthonormal && elapsed < Duration::from_secs(60);
            worst_margin = worst_margin.min(report.margin);
            slowest = slowest.max(elapsed);
            bounds.push(report.bound);
        }
        let monotone = bounds[0] > 0.0 && bounds[0] < bounds[1] && bounds[1] < bounds[2];
        let shrinking = bounds[0] <= 0.5 * bounds[2];
        pass &= monotone && shrinking;
        parts.push(format!(
            "{kind:?}: B = [{:.2e}, {:.2e}, {:.2e}], min margin {worst_margin:.2e}, slowest {slowest:.1?}",
            bounds[0], bounds[1], bounds[2]
        ));
    }
    outcome(pass, parts.join("; "))
}

fn concavity_and_coercivity() -> Outcome {
    let g = GridSpec::new(8.0, 32).unwrap();
    let n = g.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fams = families();
    let mut worst_mid = f64::INFINITY;
    for i in 0..100 {
        let eos = &fams[i % 3];
        let p = DualPoint::new(random_potential(&g, &mut rng), rng.random_range(-3.0..3.0)).unwrap();
        let q = DualPoint::new(random_potential(&g, &mut rng), rng.random_range(-3.0..3.0)).unwrap();
        let mid_v: Vec<f64> = p.potential().iter().zip(q.potential()).map(|(a, b)| 0.5 * (a + b)).collect();
        let mid = DualPoint::new(mid_v, 0.5 * (p.sigma() + q.sigma())).unwrap();
        let fp = phi_eval(&p, eos, 1.0, &g, n).unwrap();
        let fq = phi_eval(&q, eos, 1.0, &g, n).unwrap();
        let fm = phi_eval(&mid, eos, 1.0, &g, n).unwrap();
        worst_mid = worst_mid.min(fm - 0.5 * (fp + fq));
    }

    let eos = EquationOfState::boltzmann(1.0).unwrap();
    let s = solve_steady(&eos, 1.0, &g, &SolverOptions::new(n)).unwrap();
    let peak = s.certificates.phi_value;
    let mut rays_ok = 0;
    for _ in 0..10 {
        let dir: Vec<f64> = random_potential(&g, &mut rng);
        let scale = dir.iter().copied().fold(0.0, f64::max).max(1e-12);
        let dir: Vec<f64> = dir.iter().map(|d| d / scale).collect();
        let ds: f64 = rng.random_range(-1.0..1.0);
        let mut prev = peak;
        let mut ok = true;
        for j in 0..8 {
            let t = 0.25 * 2f64.powi(j);
            let v: Vec<f64> = s.potential.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let p = DualPoint::new(v, s.sigma0 + t * ds).unwrap();
            let phi = phi_eval(&p, &eos, 1.0, &g, n).unwrap();
            ok &= phi < prev;
            prev = phi;
        }
        rays_ok += usize::from(ok);
    }
    outcome(
        worst_mid >= -1e-10 && rays_ok == 10,
        format!("min Phi(mid) - average {worst_mid:.2e} over 100 pairs; {rays_ok}/10 rays strictly decreasing"),
    )
}

fn main() {
    let mut all = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all &= o.pass;
        println!("criterion {n:>2} {:<28} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "spectral oracle", spectral_oracle());
    report(2, "conjugacy", conjugacy());
    report(3, "jensen", jensen());
    report(4, "trace inequality", trace_inequality());
    let runs: Vec<Result<SteadyRun, String>> =
        steady_cases().into_iter().map(|(label, eos, lambda)| run_steady(label, &eos, lambda)).collect();
    report(5, "steady solve", steady_solve(&runs));
    report(6, "duality identity", duality(&runs));
    match &runs[0] {
        Ok(boltzmann) => {
            report(7, "propagator conservation", conservation(&boltzmann.state));
            report(8, "stationarity", stationarity(&boltzmann.state));
            report(9, "stability bound", stability(&boltzmann.state));
        }
        Err(e) => {
            for (n, name) in [(7, "propagator conservation"), (8, "stationarity"), (9, "stability bound")] {
                report(n, name, outcome(false, format!("no steady state: {e}")));
            }
        }
    }
    report(10, "concavity / coercivity", concavity_and_coercivity());
    if !all {
        std::process::exit(1);
    }
}
