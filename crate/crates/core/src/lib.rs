//! Periodic homogenization toolkit.
//!
//! Computes effective operators and first-order correctors for matrix elliptic
//! operators `b(D)* g(x/ε) b(D) + Σ (a_j(x/ε) D_j + D_j a_j(x/ε)*) + Q(x/ε)`,
//! solves the oscillatory and effective generalized resolvents on a periodic
//! torus, and measures their discrepancies as functions of `ε` and the
//! spectral parameter `ζ`.
//!
//! Conventions: `D = -i∇`; the Fourier mode `e^{i<ξ,x>}` has `D_l`-symbol
//! `ξ_l`. Grids are uniform in lattice coordinates and `ε = 1/K` with integer
//! `K`, so every oscillating coefficient is sampled exactly.

pub mod cellsolve;
pub mod config;
pub mod corrector;
pub mod demos;
pub mod error;
pub mod fields;
pub mod gridio;
pub mod harness;
pub mod krylov;
pub mod lattice;
pub mod linalg;
pub mod report;
pub mod resolvent;
mod scratch;
pub mod smoothing;
pub mod spectral;
pub mod symbols;

pub use error::{Error, Result};
pub use fields::{Norms, PeriodicField, TorusFunction};
pub use lattice::{Lattice, TorusGrid};
pub use num_complex::Complex64;
pub use symbols::SymbolB;
