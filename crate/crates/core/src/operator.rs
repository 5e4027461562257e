//! The Schrödinger operator `H_V = −Δ_h + V` as a symmetric tridiagonal
//! matrix, its lowest eigenpairs, and truncated spectral traces
//! `Tr F(H_V + σ)` and `Tr f(H_V + σ)`.
//!
//! Eigenvalues come from Sturm-count bisection, eigenvectors from inverse
//! iteration followed by Gram-Schmidt against the lower eigenvectors. Each
//! eigenfield is normalized in the `h`-weighted norm and its first
//! non-negligible component is made positive.

use serde::{Deserialize, Serialize};

use crate::casimir::EquationOfState;
use crate::error::{check_len, Error, Result};
use crate::grid::{GridSpec, RealField};

/// Potentials below this are treated as numerical zeros; anything lower is rejected.
pub const NEGATIVE_POTENTIAL_TOL: f64 = 1e-12;
/// Default ceiling for the trace tail bound relative to the partial sum.
pub const DEFAULT_TRACE_REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Hamiltonian {
    grid: GridSpec,
    potential: RealField,
}

impl Hamiltonian {
    pub fn new(grid: &GridSpec, potential: &[f64]) -> Result<Self> {
        check_len(grid.n_points(), potential.len())?;
        if let Some((j, v)) = potential
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v.is_finite() && v >= -NEGATIVE_POTENTIAL_TOL))
        {
            return Err(Error::Domain(format!("potential must be nonnegative, V[{j}] = {v}")));
        }
        Ok(Self { grid: *grid, potential: potential.to_vec() })
    }

    pub fn free(grid: &GridSpec) -> Self {
        Self { grid: *grid, potential: vec![0.0; grid.n_points()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        let d = 2.0 / (h * h);
        self.potential.iter().map(|v| d + v).collect()
    }

    pub fn off_diagonal(&self) -> f64 {
        let h = self.grid.spacing();
        -1.0 / (h * h)
    }

    /// `H_V u` for real or complex fields.
    pub fn apply<T: crate::grid::FieldValue>(&self, u: &[T]) -> Result<Vec<T>> {
        let mut out = crate::grid::laplacian_apply(&self.grid, u)?;
        for (o, (&x, &v)) in out.iter_mut().zip(u.iter().zip(&self.potential)) {
            *o = *o + x * v;
        }
        Ok(out)
    }

    /// Number of eigenvalues strictly below `x` (Sturm count via the LDLᵀ pivots).
    fn count_below(&self, diag: &[f64], off2: f64, x: f64) -> usize {
        let mut count = 0;
        let mut d = 1.0;
        for (i, &a) in diag.iter().enumerate() {
            d = if i == 0 { a - x } else { a - x - off2 / d };
            if d == 0.0 {
                d = -f64::MIN_POSITIVE.sqrt();
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Lowest `k` eigenpairs.
    pub fn eigensolve(&self, k: usize) -> Result<SpectralData> {
        let n = self.grid.n_points();
        if k == 0 || k > n {
            return Err(Error::Domain(format!("eigensolve needs 1 <= K <= N = {n}, got {k}")));
        }
        let diag = self.diagonal();
        let off = self.off_diagonal();
        let off2 = off * off;
        let radius = if n > 1 { 2.0 * off.abs() } else { 0.0 };
        let lower = diag.iter().fold(f64::INFINITY, |m, &a| m.min(a)) - radius - 1.0;
        let upper = diag.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a)) + radius + 1.0;

        let mut mu = Vec::with_capacity(k);
        for index in 0..k {
            // smallest x with count_below(x) > index
            let mut lo = lower;
            let mut hi = upper;
            for _ in 0..2000 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if self.count_below(&diag, off2, mid) > index {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            mu.push(0.5 * (lo + hi));
        }
        let scale = upper.abs().max(lower.abs());
        for w in mu.windows(2) {
            if w[1] - w[0] <= 1e-13 * scale {
                return Err(Error::Eigen(format!(
                    "degenerate eigenvalues {} and {} cannot be separated",
                    w[0], w[1]
                )));
            }
        }

        let h = self.grid.spacing();
        let inv_sqrt_h = 1.0 / h.sqrt();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut residuals = Vec::with_capacity(k);
        for &lambda in &mu {
            let mut x = inverse_iteration(&diag, off, lambda, scale)?;
            for _ in 0..2 {
                for prev in &vectors {
                    let dot: f64 = prev.iter().zip(&x).map(|(a, b)| a * b).sum();
                    for (xi, pi) in x.iter_mut().zip(prev) {
                        *xi -= dot * pi;
                    }
                }
                normalize(&mut x)?;
            }
            let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if let Some(first) = x.iter().find(|v| v.abs() > 1e-8 * peak) {
                if *first < 0.0 {
                    x.iter_mut().for_each(|v| *v = -*v);
                }
            }
            let res = tridiagonal_residual(&diag, off, &x, lambda);
            // negated so a NaN residual also fails
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(res <= 1e-9 * (1.0 + lambda.abs())) {
                return Err(Error::Eigen(format!(
                    "inverse iteration stalled at eigenvalue {lambda}: residual {res:e}"
                )));
            }
            residuals.push(res);
            vectors.push(x);
        }
        let psi = vectors
            .into_iter()
            .map(|v| v.into_iter().map(|x| x * inv_sqrt_h).collect())
            .collect();
        Ok(SpectralData {
            grid: self.grid,
            mu,
            psi,
            residuals,
            first_neglected_lower_bound: if k < n { self.grid.free_eigenvalue(k + 1) } else { f64::INFINITY },
            neglected: n - k,
        })
    }
}

fn normalize(x: &mut [f64]) -> Result<()> {
    let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(nrm.is_finite() && nrm > 0.0) {
        return Err(Error::Eigen("eigenvector iterate collapsed".into()));
    }
    x.iter_mut().for_each(|v| *v /= nrm);
    Ok(())
}

fn tridiagonal_residual(diag: &[f64], off: f64, x: &[f64], lambda: f64) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut y = (diag[i] - lambda) * x[i];
        if i > 0 {
            y += off * x[i - 1];
        }
        if i + 1 < n {
            y += off * x[i + 1];
        }
        acc += y * y;
    }
    acc.sqrt()
}

// Solves (T − shift·I) x = b with partial pivoting, three sweeps.
fn inverse_iteration(diag: &[f64], off: f64, shift: f64, scale: f64) -> Result<Vec<f64>> {
    let n = diag.len();
    let tiny = f64::EPSILON * scale;
    // deterministic start vector with no symmetry
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).fract() + 0.25 * (i as f64 / n as f64))
        .collect();
    normalize(&mut x)?;
    for _ in 0..3 {
        x = solve_shifted(diag, off, shift, &x, tiny);
        normalize(&mut x)?;
    }
    Ok(x)
}

// Gaussian elimination with partial pivoting on a tridiagonal matrix
// (LAPACK gtsv-style, one extra super-diagonal from pivoting).
fn solve_shifted(diag: &[f64], off: f64, shift: f64, rhs: &[f64], tiny: f64) -> Vec<f64> {
    let n = diag.len();
    let mut d: Vec<f64> = diag.iter().map(|a| a - shift).collect();
    let mut du = vec![off; n.saturating_sub(1)];
    let mut du2 = vec![0.0; n.saturating_sub(2)];
    let mut dl = vec![off; n.saturating_sub(1)];
    let mut b = rhs.to_vec();
    for i in 0..n.saturating_sub(1) {
        if d[i].abs() >= dl[i].abs() {
            if d[i] == 0.0 {
                d[i] = tiny;
            }
            let m = dl[i] / d[i];
            d[i + 1] -= m * du[i];
            b[i + 1] -= m * b[i];
            dl[i] = 0.0;
        } else {
            // swap rows i and i+1
            let m = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - m * tmp;
            if i + 1 < n - 1 {
                du2[i] = du[i + 1];
                du[i + 1] = -m * du2[i];
            }
            du[i] = tmp;
            let tb = b[i];
            b[i] = b[i + 1];
            b[i + 1] = tb - m * b[i + 1];
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = tiny;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = b[n - 1] / d[n - 1];
    if n > 1 {
        x[n - 2] = (b[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
    }
    for i in (0..n.saturating_sub(2)).rev() {
        x[i] = (b[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
    }
    x
}

/// Truncated eigensystem of `H_V`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralData {
    pub grid: GridSpec,
    /// Ascending eigenvalues `μ_1 < … < μ_K`.
    pub mu: Vec<f64>,
    /// Eigenfields, orthonormal in the `h`-weighted inner product.
    pub psi: Vec<RealField>,
    pub residuals: Vec<f64>,
    /// Lower bound for `μ_{K+1}` (free discrete eigenvalue, valid since `V ≥ 0`).
    pub first_neglected_lower_bound: f64,
    /// Number of eigenvalues not computed (`N − K`).
    pub neglected: usize,
}

/// A truncated trace with a rigorous bound on the neglected part.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceSum {
    pub partial: f64,
    pub tail_bound: f64,
}

impl SpectralData {
    pub fn k(&self) -> usize {
        self.mu.len()
    }

    fn tail(&self, g: impl Fn(f64) -> Result<f64>, sigma: f64) -> Result<f64> {
        if self.neglected == 0 {
            return Ok(0.0);
        }
        // μ_k ≥ μ_k^free ≥ μ_{K+1}^free for k > K, and g is nonincreasing
        Ok(self.neglected as f64 * g(self.first_neglected_lower_bound + sigma)?)
    }

    fn checked(partial: f64, tail_bound: f64, rel_tol: f64) -> Result<TraceSum> {
        if tail_bound > rel_tol * partial {
            return Err(Error::Truncation { tail: tail_bound, partial, rel_tol });
        }
        Ok(TraceSum { partial, tail_bound })
    }

    /// `Σ_{k≤K} F(μ_k + σ)` without the truncation check.
    pub fn partial_trace_tail_integral(&self, sigma: f64, eos: &EquationOfState) -> Result<f64> {
        self.mu.iter().map(|&m| eos.tail_integral(m + sigma)).sum()
    }

    /// `Σ_{k≤K} f(μ_k + σ)` without the truncation check.
    pub fn partial_trace_occupation(&self, sigma: f64, eos: &EquationOfState) -> Result<f64> {
        self.mu.iter().map(|&m| eos.f(m + sigma)).sum()
    }

    /// `Tr F(H_V + σ)`, failing when the tail bound exceeds `rel_tol` of the partial sum.
    pub fn trace_tail_integral(&self, sigma: f64, eos: &EquationOfState, rel_tol: f64) -> Result<TraceSum> {
        let partial = self.partial_trace_tail_integral(sigma, eos)?;
        let tail = self.tail(|s| eos.tail_integral(s), sigma)?;
        Self::checked(partial, tail, rel_tol)
    }

    /// `Tr f(H_V + σ)`, failing when the tail bound exceeds `rel_tol` of the partial sum.
    pub fn trace_occupation(&self, sigma: f64, eos: &EquationOfState, rel_tol: f64) -> Result<TraceSum> {
        let partial = self.partial_trace_occupation(sigma, eos)?;
        let tail = self.tail(|s| eos.f(s), sigma)?;
        Self::checked(partial, tail, rel_tol)
    }

    /// Occupations `f(μ_k + σ)`.
    pub fn occupations(&self, sigma: f64, eos: &EquationOfState) -> Result<Vec<f64>> {
        self.mu.iter().map(|&m| eos.f(m + sigma)).collect()
    }

    /// `Σ_k λ_k |ψ_k|²`.
    pub fn density(&self, occupations: &[f64]) -> Result<RealField> {
        check_len(self.k(), occupations.len())?;
        let mut n = vec![0.0; self.grid.n_points()];
        for (l, psi) in occupations.iter().zip(&self.psi) {
            for (nj, p) in n.iter_mut().zip(psi) {
                *nj += l * p * p;
            }
        }
        Ok(n)
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let h = self.grid.spacing();
        let mut worst = 0.0_f64;
        for i in 0..self.k() {
            for j in 0..=i {
                let g: f64 = h * self.psi[i].iter().zip(&self.psi[j]).map(|(a, b)| a * b).sum::<f64>();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }
}

/// Convenience wrapper: `Tr F(H + σ)` with a fresh eigensolve.
pub fn trace_tail_integral(h: &Hamiltonian, sigma: f64, eos: &EquationOfState, k: usize) -> Result<TraceSum> {
    h.eigensolve(k)?.trace_tail_integral(sigma, eos, DEFAULT_TRACE_REL_TOL)
}

/// Convenience wrapper: `Tr f(H + σ)` with a fresh eigensolve.
pub fn trace_occupation(h: &Hamiltonian, sigma: f64, eos: &EquationOfState, k: usize) -> Result<TraceSum> {
    h.eigensolve(k)?.trace_occupation(sigma, eos, DEFAULT_TRACE_REL_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_oracle(h: &Hamiltonian) -> (Vec<f64>, DMatrix<f64>) {
        let n = h.grid().n_points();
        let d = h.diagonal();
        let off = h.off_diagonal();
        let m = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                d[i]
            } else if i.abs_diff(j) == 1 {
                off
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(m);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
        (vals, vecs)
    }

    #[test]
    fn free_spectrum_closed_form() {
        for len in [1.0, 8.0, 31.0] {
            let g = GridSpec::new(len, 63).unwrap();
            let s = Hamiltonian::free(&g).eigensolve(16).unwrap();
            for (k, m) in s.mu.iter().enumerate() {
                let exact = g.free_eigenvalue(k + 1);
                assert!((m - exact).abs() <= 1e-10 * exact, "L={len} k={k}");
            }
            assert!(s.orthonormality_defect() < 1e-10);
        }
    }

    #[test]
    fn matches_dense_oracle_on_random_potential() {
        let g = GridSpec::new(6.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..3.0)).collect();
        let h = Hamiltonian::new(&g, &v).unwrap();
        let s = h.eigensolve(8).unwrap();
        let (vals, vecs) = dense_oracle(&h);
        let sqrt_h = g.spacing().sqrt();
        for k in 0..8 {
            assert!((s.mu[k] - vals[k]).abs() <= 1e-9 * vals[k].abs().max(1.0));
            // align signs then compare normalized vectors
            let dot: f64 = (0..64).map(|j| s.psi[k][j] * sqrt_h * vecs[(j, k)]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-9, "k={k} overlap {dot}");
            assert!(s.residuals[k] <= 1e-9 * (1.0 + s.mu[k]));
        }
        // residual measured through the operator
        for k in 0..8 {
            let hp = h.apply(&s.psi[k]).unwrap();
            let r: f64 = hp.iter().zip(&s.psi[k]).map(|(a, b)| (a - s.mu[k] * b).powi(2)).sum::<f64>();
            assert!((r * g.spacing()).sqrt() <= 1e-9 * (1.0 + s.mu[k]));
        }
    }

    #[test]
    fn shift_identity_and_sign_convention() {
        let g = GridSpec::new(3.0, 50).unwrap();
        let v = g.sample(|x| x * (3.0 - x));
        let c = 1.75;
        let vc: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = Hamiltonian::new(&g, &v).unwrap().eigensolve(10).unwrap();
        let b = Hamiltonian::new(&g, &vc).unwrap().eigensolve(10).unwrap();
        for k in 0..10 {
            assert!((b.mu[k] - a.mu[k] - c).abs() < 1e-10);
            assert!(a.psi[k][0] > 0.0);
            let diff = a.psi[k].iter().zip(&b.psi[k]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-8);
        }
        // strictly increasing spectrum
        assert!(a.mu.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn eigensolve_rejects_bad_requests() {
        let g = GridSpec::new(1.0, 10).unwrap();
        let h = Hamiltonian::free(&g);
        assert!(h.eigensolve(0).is_err());
        assert!(h.eigensolve(11).is_err());
        assert!(h.eigensolve(10).is_ok());
        let mut v = vec![0.0; 10];
        v[3] = -1e-6;
        assert!(matches!(Hamiltonian::new(&g, &v), Err(Error::Domain(_))));
        v[3] = -1e-13;
        assert!(Hamiltonian::new(&g, &v).is_ok());
        let single = GridSpec::new(2.0, 1).unwrap();
        let s = Hamiltonian::free(&single).eigensolve(1).unwrap();
        assert!((s.mu[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn traces_against_full_spectrum() {
        let g = GridSpec::new(4.0, 12).unwrap();
        let eos = EquationOfState::boltzmann(1.0).unwrap();
        let s = Hamiltonian::free(&g).eigensolve(12).unwrap();
        let sigma = 0.3;
        let direct: f64 = (1..=12).map(|k| (-(g.free_eigenvalue(k) + sigma)).exp()).sum();
        let t = s.trace_tail_integral(sigma, &eos, 1e-8).unwrap();
        assert_eq!(t.tail_bound, 0.0);
        assert!((t.partial - direct).abs() < 1e-13 * direct);
        let occ = s.trace_occupation(sigma, &eos, 1e-8).unwrap();
        assert!((occ.partial - direct).abs() < 1e-13 * direct);
    }

    #[test]
    fn truncated_trace_reports_tail() {
        let g = GridSpec::new(8.0, 128).unwrap();
        let eos = EquationOfState::boltzmann(1.0).unwrap();
        let s = Hamiltonian::free(&g).eigensolve(24).unwrap();
        let t = s.trace_tail_integral(0.0, &eos, 1e-8).unwrap();
        assert!(t.tail_bound > 0.0 && t.tail_bound < 1e-30);
        let too_few = Hamiltonian::free(&g).eigensolve(2).unwrap();
        assert!(matches!(
            too_few.trace_tail_integral(-5.0, &eos, 1e-8),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn cutoff_trace_below_support_vanishes() {
        let g = GridSpec::new(8.0, 64).unwrap();
        let eos = EquationOfState::power_cutoff(0.1, 1.0).unwrap();
        let s = Hamiltonian::free(&g).eigensolve(10).unwrap();
        let t = s.trace_tail_integral(0.0, &eos, 1e-8).unwrap();
        assert_eq!(t.partial, 0.0);
        assert_eq!(t.tail_bound, 0.0);
    }

    #[test]
    fn trace_decreases_in_sigma() {
        let g = GridSpec::new(5.0, 40).unwrap();
        let eos = EquationOfState::fermi_dirac(1.0, 1.0).unwrap();
        let s = Hamiltonian::free(&g).eigensolve(40).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..20 {
            let sigma = -3.0 + 0.5 * i as f64;
            let t = s.partial_trace_tail_integral(sigma, &eos).unwrap();
            assert!(t < prev);
            prev = t;
        }
    }
}
