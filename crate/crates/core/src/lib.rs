//! Bayesian estimation and uncertainty quantification for parameters of
//! regression models whose mean function solves an ODE system.
//!
//! Three posterior constructions are provided:
//!
//! - [`rksb`]: random-walk Metropolis-within-Gibbs on `(θ, σ²)` under the
//!   likelihood built from an RK4 solution of the ODE.
//! - [`rktb`]: a conjugate B-spline posterior on the regression curve, each
//!   curve draw mapped to `θ` by weighted L² projection onto RK4 solutions.
//! - [`ts`]: the derivative-matching two-step comparator on the same spline
//!   posterior.
//!
//! [`study`] contains the Lotka–Volterra coverage study, asymptotic
//! diagnostics and the CSV/Markdown reporting used by the `odebayes` binary.

pub mod error;
pub mod numerics;
pub mod ode;
pub mod posterior;
pub mod rksb;
pub mod rktb;
pub mod spline;
pub mod study;
pub mod ts;

pub(crate) mod induced;
pub(crate) mod par;

pub use error::{Error, Result};
pub use par::Execution;

pub use posterior::{Case, Dataset, Method, PosteriorDraws, SigmaPrior};
