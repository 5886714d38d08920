//! Shared numerical kernels: quadrature on [0, 1], box-constrained
//! minimization and deterministic random streams.

pub mod optimize;
pub mod quadrature;
pub mod rng;

pub use optimize::{minimize_box, BoxDomain, MinimizeOptions, Minimum, Objective};
pub use quadrature::{integrate, QuadratureRule};
pub use rng::{split_stream, RngStream};
