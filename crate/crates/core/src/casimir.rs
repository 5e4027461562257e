//! Equations of state `f`, their tail integral `F(s) = ∫_s^∞ f`, the inverse
//! `f⁻¹` and the Legendre conjugate `F*`, plus the Casimir sum `Σ F*(−λ_k)`.
//!
//! `F*` is evaluated through `F*(s) = ∫_{−s}^0 f⁻¹(σ) dσ` for `s ≤ 0`. Integrating
//! by parts under the substitution `σ = f(u)` turns the integral into the
//! closed expression `F*(−λ) = −λ·f⁻¹(λ) − F(f⁻¹(λ))`, which is what
//! [`EquationOfState::conjugate`] computes. The direct quadrature of the
//! same integral is kept as [`EquationOfState::conjugate_by_quadrature`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_with_breaks};

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EosKind {
    /// `f(s) = exp(−βs)`.
    Boltzmann { beta: f64 },
    /// `f(s) = C ∫_{ℝ³} dv / (ε + exp(|v|²/2 + s))`.
    FermiDirac {
        #[serde(rename = "C")]
        c: f64,
        eps: f64,
    },
    /// `f(s) = max(s₀ − s, 0)^q`.
    PowerCutoff { s0: f64, q: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquationOfState {
    #[serde(flatten)]
    kind: EosKind,
    quad_tol: f64,
}

impl EquationOfState {
    pub fn new(kind: EosKind, quad_tol: f64) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match kind {
            EosKind::Boltzmann { beta } => positive("beta", beta)?,
            EosKind::FermiDirac { c, eps } => {
                positive("C", c)?;
                positive("eps", eps)?;
            }
            EosKind::PowerCutoff { s0, q } => {
                if !s0.is_finite() {
                    return Err(Error::Domain(format!("s0 must be finite, got {s0}")));
                }
                if !(q.is_finite() && q >= 1.0) {
                    return Err(Error::Domain(format!("q must be >= 1, got {q}")));
                }
            }
        }
        if !(quad_tol.is_finite() && quad_tol > 0.0 && quad_tol < 1.0) {
            return Err(Error::Domain(format!("quadrature tolerance out of range: {quad_tol}")));
        }
        Ok(Self { kind, quad_tol })
    }

    pub fn boltzmann(beta: f64) -> Result<Self> {
        Self::new(EosKind::Boltzmann { beta }, DEFAULT_QUAD_TOL)
    }

    pub fn fermi_dirac(c: f64, eps: f64) -> Result<Self> {
        Self::new(EosKind::FermiDirac { c, eps }, DEFAULT_QUAD_TOL)
    }

    pub fn power_cutoff(s0: f64, q: f64) -> Result<Self> {
        Self::new(EosKind::PowerCutoff { s0, q }, DEFAULT_QUAD_TOL)
    }

    pub fn kind(&self) -> EosKind {
        self.kind
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    /// Level `s₀` above which `f` vanishes; `+∞` for the untruncated families.
    pub fn cutoff(&self) -> f64 {
        match self.kind {
            EosKind::PowerCutoff { s0, .. } => s0,
            _ => f64::INFINITY,
        }
    }

    /// Occupation assigned to the level `s`.
    pub fn f(&self, s: f64) -> Result<f64> {
        match self.kind {
            EosKind::Boltzmann { beta } => Ok((-beta * s).exp()),
            EosKind::PowerCutoff { s0, q } => Ok((s0 - s).max(0.0).powf(q)),
            EosKind::FermiDirac { c, eps } => {
                let occ = move |y: f64| {
                    if y > 0.0 {
                        let e = (-y).exp();
                        e / (1.0 + eps * e)
                    } else {
                        1.0 / (eps + y.exp())
                    }
                };
                Ok(4.0 * PI * c * self.radial_integral(s, |r| r * r * occ(0.5 * r * r + s))?)
            }
        }
    }

    /// `F(s) = ∫_s^∞ f(σ) dσ`.
    pub fn tail_integral(&self, s: f64) -> Result<f64> {
        match self.kind {
            EosKind::Boltzmann { beta } => Ok((-beta * s).exp() / beta),
            EosKind::PowerCutoff { s0, q } => Ok((s0 - s).max(0.0).powf(q + 1.0) / (q + 1.0)),
            EosKind::FermiDirac { c, eps } => {
                // ∫_s^∞ dσ / (ε + e^{y+σ}) = ln(1 + ε e^{−(y+s)}) / ε
                let log_term = move |y: f64| {
                    if y > 0.0 {
                        (eps * (-y).exp()).ln_1p()
                    } else {
                        -y + (eps + y.exp()).ln()
                    }
                };
                Ok(4.0 * PI * c / eps
                    * self.radial_integral(s, |r| r * r * log_term(0.5 * r * r + s))?)
            }
        }
    }

    // ∫_0^∞ g(r) dr for integrands that vanish once r²/2 + s exceeds the
    // exponent range.
    fn radial_integral(&self, s: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
        const EXPONENT_LIMIT: f64 = 760.0;
        if s >= EXPONENT_LIMIT {
            return Ok(0.0);
        }
        let r_max = (2.0 * (EXPONENT_LIMIT - s)).sqrt();
        let mut breaks = vec![0.0];
        let edge = (2.0 * (-s).max(0.0)).sqrt();
        for b in [edge, edge + 4.0, edge + 10.0] {
            if b > 0.0 && b < r_max {
                breaks.push(b);
            }
        }
        breaks.push(r_max);
        Ok(integrate_with_breaks(g, &breaks, 1e-300, self.quad_tol)?.value)
    }

    /// `f⁻¹(λ)` for `λ > 0`, the unique level in `(−∞, s₀)` carrying occupation `λ`.
    pub fn inverse(&self, lambda: f64) -> Result<f64> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!("inverse needs a positive occupation, got {lambda}")));
        }
        match self.kind {
            EosKind::Boltzmann { beta } => Ok(-lambda.ln() / beta),
            EosKind::PowerCutoff { s0, q } => Ok(s0 - lambda.powf(1.0 / q)),
            EosKind::FermiDirac { .. } => self.inverse_by_bisection(lambda),
        }
    }

    /// Bracketed bisection for `f(s) = λ` using only the monotonicity of `f`.
    pub fn inverse_by_bisection(&self, lambda: f64) -> Result<f64> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Domain(format!("inverse needs a positive occupation, got {lambda}")));
        }
        let cutoff = self.cutoff();
        let mut hi = if cutoff.is_finite() { cutoff } else { 0.0 };
        let mut step = 1.0;
        while self.f(hi)? >= lambda {
            hi += step;
            step *= 2.0;
            if step > 1e8 {
                return Err(Error::Numerical(format!("no right bracket for f(s) = {lambda}")));
            }
        }
        let mut lo = hi - 1.0;
        step = 1.0;
        while self.f(lo)? <= lambda {
            hi = lo;
            lo -= step;
            step *= 2.0;
            if step > 1e8 {
                return Err(Error::Numerical(format!("no left bracket for f(s) = {lambda}")));
            }
        }
        self.bisect_level(lambda, lo, hi)
    }

    // Requires f(lo) > λ ≥ f(hi).
    fn bisect_level(&self, lambda: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.f(mid)? > lambda {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Legendre conjugate `F*(s)` on `s ≤ 0`.
    pub fn conjugate(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s > 0.0 {
            return Err(Error::Domain(format!("conjugate is evaluated on s <= 0 only, got {s}")));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        let lambda = -s;
        let level = self.inverse(lambda)?;
        Ok(-lambda * level - self.tail_integral(level)?)
    }

    /// `F*(s) = ∫_{−s}^0 f⁻¹(σ) dσ` by direct quadrature, with `σ = λe^{−t}`
    /// removing the endpoint singularity of `f⁻¹` at zero occupation.
    pub fn conjugate_by_quadrature(&self, s: f64) -> Result<f64> {
        if s.is_nan() || s > 0.0 {
            return Err(Error::Domain(format!("conjugate is evaluated on s <= 0 only, got {s}")));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        let lambda = -s;
        let integrand = |t: f64| {
            let w = (-t).exp();
            self.inverse(lambda * w).map(|level| level * w).unwrap_or(f64::NAN)
        };
        let est = integrate(integrand, 0.0, 90.0, 1e-300, 1e-13)?;
        if !est.value.is_finite() {
            return Err(Error::Numerical("inverse failed inside conjugate quadrature".into()));
        }
        Ok(-lambda * est.value)
    }

    /// `Σ_k F*(−λ_k)` over a finite occupation sequence.
    pub fn casimir_sum(&self, occupations: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for &l in occupations {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::Domain(format!("occupations must be nonnegative, got {l}")));
            }
            acc += self.conjugate(-l)?;
        }
        Ok(acc)
    }

    pub fn describe(&self) -> String {
        match self.kind {
            EosKind::Boltzmann { beta } => format!("boltzmann(beta={beta})"),
            EosKind::FermiDirac { c, eps } => format!("fermi-dirac(C={c},eps={eps})"),
            EosKind::PowerCutoff { s0, q } => format!("power-cutoff(s0={s0},q={q})"),
        }
    }
}

/// Cached `(λ, f⁻¹(λ))` nodes on a log-spaced occupation range. Lookups
/// inside the range start bisection from the bracketing nodes, so every value
/// returned is an exact inversion of `f` rather than an interpolant.
#[derive(Debug, Clone)]
pub struct ConjugateTable {
    eos: EquationOfState,
    lambdas: Vec<f64>,
    levels: Vec<f64>,
}

impl ConjugateTable {
    pub fn new(eos: &EquationOfState, lambda_max: f64, nodes: usize) -> Result<Self> {
        if !(lambda_max.is_finite() && lambda_max > 0.0) || nodes < 2 {
            return Err(Error::Domain("table needs lambda_max > 0 and at least 2 nodes".into()));
        }
        let decades = 12.0;
        let lambdas: Vec<f64> = (0..nodes)
            .map(|i| lambda_max * 10f64.powf(-decades * (1.0 - i as f64 / (nodes - 1) as f64)))
            .collect();
        let levels = lambdas.iter().map(|&l| eos.inverse(l)).collect::<Result<Vec<_>>>()?;
        Ok(Self { eos: *eos, lambdas, levels })
    }

    pub fn lambda_max(&self) -> f64 {
        *self.lambdas.last().expect("table has nodes")
    }

    pub fn inverse(&self, lambda: f64) -> Result<f64> {
        let lo_l = self.lambdas[0];
        if !(lambda >= lo_l && lambda <= self.lambda_max()) {
            return self.eos.inverse(lambda);
        }
        let i = self.lambdas.partition_point(|&l| l < lambda);
        if self.lambdas[i] == lambda {
            return Ok(self.levels[i]);
        }
        // λ_{i−1} < λ < λ_i, and levels decrease as occupations grow
        let lo = self.levels[i];
        let hi = self.levels[i - 1];
        if self.eos.f(lo)? <= lambda || self.eos.f(hi)? > lambda {
            return self.eos.inverse(lambda);
        }
        self.eos.bisect_level(lambda, lo, hi)
    }

    /// `F*(−λ)` using the cached inverse.
    pub fn conjugate_at(&self, lambda: f64) -> Result<f64> {
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let level = self.inverse(lambda)?;
        Ok(-lambda * level - self.eos.tail_integral(level)?)
    }
}

/// Outcome of the sampled Casimir-class checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CasimirReport {
    /// (i): positive below the cutoff, zero above it.
    pub support: bool,
    /// (ii): strictly decreasing below the cutoff.
    pub strictly_decreasing: bool,
    /// (iii): `f(s)(1+s)^4` bounded and eventually nonincreasing.
    pub decay: bool,
    pub decay_constant: f64,
    /// `min_{s≤0} F(s) + 2s` over the sample (finite when bounded below).
    pub linear_lower_bound: Option<f64>,
}

impl CasimirReport {
    pub fn passes(&self) -> bool {
        self.support && self.strictly_decreasing && self.decay
    }
}

fn sample_levels(cutoff: f64) -> Vec<f64> {
    let mut s = vec![0.0];
    for i in 0..=48 {
        let e = -2.0 + 6.0 * i as f64 / 48.0;
        s.push(10f64.powf(e));
        if e <= 2.0 {
            s.push(-10f64.powf(e));
        }
    }
    if cutoff.is_finite() {
        let d = 1e-6 * cutoff.abs().max(1.0);
        s.extend([cutoff - d, cutoff, cutoff + d, cutoff + 1.0]);
    }
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// Checks the Casimir-class conditions for an arbitrary profile on a sampled
/// log-spaced level grid.
pub fn validate_profile(f: impl Fn(f64) -> Result<f64>, cutoff: f64) -> CasimirReport {
    let samples = sample_levels(cutoff);
    let values: Vec<Option<f64>> = samples.iter().map(|&s| f(s).ok()).collect();

    let mut support = values.iter().all(Option::is_some);
    let mut last_positive = f64::INFINITY;
    for (&s, v) in samples.iter().zip(&values) {
        let Some(v) = *v else { continue };
        if s < cutoff {
            // zeros are acceptable only where the true value underflows
            if !(v > 0.0 || (s > 0.0 && last_positive < 1e-100)) {
                support = false;
            }
            if v > 0.0 {
                last_positive = v;
            }
        } else if v != 0.0 {
            support = false;
        }
    }

    let mut strictly_decreasing = true;
    let mut prev: Option<f64> = None;
    for (&s, v) in samples.iter().zip(&values) {
        let Some(v) = *v else { continue };
        if s >= cutoff || !v.is_finite() || v == 0.0 {
            continue;
        }
        if let Some(p) = prev {
            if v >= p {
                strictly_decreasing = false;
            }
        }
        prev = Some(v);
    }

    let weighted: Vec<(f64, f64)> = samples
        .iter()
        .zip(&values)
        .filter(|(&s, _)| s >= 0.0)
        .map(|(&s, v)| (s, v.map_or(f64::INFINITY, |v| v * (1.0 + s).powi(4))))
        .collect();
    let decay_constant = weighted.iter().fold(0.0_f64, |m, &(_, w)| m.max(w));
    let final_decade: Vec<f64> =
        weighted.iter().filter(|(s, _)| *s >= 1e3).map(|&(_, w)| w).collect();
    let decay = decay_constant.is_finite()
        && final_decade.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));

    CasimirReport {
        support,
        strictly_decreasing,
        decay,
        decay_constant,
        linear_lower_bound: None,
    }
}

/// Sampled check of the Casimir-class conditions for an equation of state.
pub fn validate_casimir_class(eos: &EquationOfState) -> CasimirReport {
    let mut report = validate_profile(|s| eos.f(s), eos.cutoff());
    let bound = sample_levels(eos.cutoff())
        .into_iter()
        .filter(|&s| s <= 0.0)
        .map(|s| eos.tail_integral(s).map(|big| big + 2.0 * s))
        .collect::<Result<Vec<_>>>()
        .ok()
        .map(|v| v.into_iter().fold(f64::INFINITY, f64::min));
    report.linear_lower_bound = bound.filter(|b| b.is_finite());
    report
}
