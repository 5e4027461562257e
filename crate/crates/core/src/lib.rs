//! Steady states of the mixed-state Schrödinger-Poisson system on a Dirichlet
//! interval, obtained as the maximizer of a strictly concave dual functional,
//! together with a Crank-Nicolson propagator and energy-Casimir stability audits.
//!
//! Units: `i ∂ₜψ = −Δψ + Vψ`, `−ΔV = n`, homogeneous Dirichlet data on `(0, L)`.

pub mod casimir;
pub mod cli;
pub mod config;
pub mod error;
pub mod evolution;
pub mod grid;
pub mod io;
pub mod operator;
pub mod quadrature;
pub mod selfcheck;
pub mod stability;
pub mod steady_state;

pub use casimir::{EosKind, EquationOfState};
pub use error::{Error, Result};
pub use evolution::{EnsembleState, EvolutionOptions, EvolutionTrace, PerturbKind};
pub use grid::GridSpec;
pub use operator::{Hamiltonian, SpectralData};
pub use stability::StabilityReport;
pub use steady_state::{Method, SolverOptions, SteadyState};
