//! Uniform finite-difference grid on `(0, L)` with homogeneous Dirichlet data.
//!
//! Fields hold the `N` interior node values only; the boundary nodes
//! `x_0 = 0` and `x_{N+1} = L` are implicitly zero. Every norm and inner
//! product is weighted by the spacing `h` so that refinement converges to the
//! continuum values.
//!
//! Sign convention: [`laplacian_apply`] returns MINUS the discrete Laplacian,
//! `(2u_j − u_{j−1} − u_{j+1}) / h²`, a positive definite operator.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type RealField = Vec<f64>;
pub type ComplexField = Vec<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "L")]
    length: f64,
    #[serde(rename = "N")]
    n_points: usize,
}

impl GridSpec {
    pub fn new(length: f64, n_points: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Domain(format!("grid length must be positive, got {length}")));
        }
        if n_points == 0 {
            return Err(Error::Domain("grid needs at least one interior node".into()));
        }
        Ok(Self { length, n_points })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n_points + 1) as f64
    }

    /// Coordinate of interior node `j` (0-based, so `x = (j + 1) h`).
    pub fn x(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.x(j)).collect()
    }

    /// Samples a function at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> RealField {
        (0..self.n_points).map(|j| f(self.x(j))).collect()
    }

    /// k-th eigenvalue (1-based) of the free discrete operator `−Δ_h`.
    pub fn free_eigenvalue(&self, k: usize) -> f64 {
        let h = self.spacing();
        let theta = k as f64 * std::f64::consts::PI / (self.n_points + 1) as f64;
        // 2(1 − cos θ)/h² written as 4 sin²(θ/2)/h² to avoid cancellation
        let s = (0.5 * theta).sin();
        4.0 * s * s / (h * h)
    }
}

/// Scalar types a field may carry.
pub trait FieldValue:
    Copy + Default + Send + Sync + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn abs2(self) -> f64;
    fn to_complex(self) -> Complex64;
}

impl FieldValue for f64 {
    fn abs2(self) -> f64 {
        self * self
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl FieldValue for Complex64 {
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn to_complex(self) -> Complex64 {
        self
    }
}

/// Discrete `−Δ u` with zero ghost values.
pub fn laplacian_apply<T: FieldValue>(grid: &GridSpec, u: &[T]) -> Result<Vec<T>> {
    check_len(grid.n_points(), u.len())?;
    let h = grid.spacing();
    let inv_h2 = 1.0 / (h * h);
    let n = u.len();
    let zero = T::default();
    Ok((0..n)
        .map(|j| {
            let left = if j > 0 { u[j - 1] } else { zero };
            let right = if j + 1 < n { u[j + 1] } else { zero };
            (u[j] + u[j] - left - right) * inv_h2
        })
        .collect())
}

/// Solves `(−Δ_h) V = n` with Dirichlet closure.
pub fn poisson_solve(grid: &GridSpec, density: &[f64]) -> Result<RealField> {
    check_len(grid.n_points(), density.len())?;
    let h = grid.spacing();
    let h2 = h * h;
    // (2V_j − V_{j−1} − V_{j+1}) = h² n_j
    let rhs: Vec<f64> = density.iter().map(|&d| d * h2).collect();
    let n = rhs.len();
    let sub = vec![-1.0; n];
    let diag = vec![2.0; n];
    Ok(solve_tridiagonal(&sub, &diag, &sub, &rhs))
}

/// Thomas algorithm for a tridiagonal system. `lower[0]` and `upper[n-1]`
/// are ignored. The matrix is assumed diagonally dominant.
pub fn solve_tridiagonal<T>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Vec<T>
where
    T: Copy + std::ops::Div<Output = T> + std::ops::Mul<Output = T> + Sub<Output = T>,
{
    let n = diag.len();
    let mut c = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    c.push(upper[0] / diag[0]);
    d.push(rhs[0] / diag[0]);
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        c.push(upper[i] / denom);
        d.push((rhs[i] - lower[i] * d[i - 1]) / denom);
    }
    let mut x = d;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] = x[i] - c[i] * x[i + 1];
    }
    x
}

/// `h Σ conj(u_j) v_j`, conjugate-linear in the first slot.
pub fn inner<T: FieldValue>(grid: &GridSpec, u: &[T], v: &[T]) -> Result<Complex64> {
    check_len(grid.n_points(), u.len())?;
    check_len(grid.n_points(), v.len())?;
    let s: Complex64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| a.to_complex().conj() * b.to_complex())
        .sum();
    Ok(s * grid.spacing())
}

/// Real inner product `h Σ u_j v_j`.
pub fn inner_real(grid: &GridSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(grid.n_points(), u.len())?;
    check_len(grid.n_points(), v.len())?;
    Ok(grid.spacing() * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
}

pub fn norm_l2<T: FieldValue>(grid: &GridSpec, u: &[T]) -> Result<f64> {
    check_len(grid.n_points(), u.len())?;
    Ok((grid.spacing() * u.iter().map(|x| x.abs2()).sum::<f64>()).sqrt())
}

/// `h Σ_{j=0..N} |(u_{j+1} − u_j)/h|²` with zero boundary values.
pub fn grad_norm_sq<T: FieldValue>(grid: &GridSpec, u: &[T]) -> Result<f64> {
    check_len(grid.n_points(), u.len())?;
    let h = grid.spacing();
    let n = u.len();
    let zero = T::default();
    let mut acc = 0.0;
    for j in 0..=n {
        let left = if j > 0 { u[j - 1] } else { zero };
        let right = if j < n { u[j] } else { zero };
        acc += (right - left).abs2();
    }
    Ok(acc / h)
}

pub fn max_abs(u: &[f64]) -> f64 {
    u.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
