//! Deep linear networks trained on linearly separable data, together with
//! the machinery needed to watch what training does to them: gradient flow
//! and gradient descent drivers, a self-contained hard-margin SVM solver,
//! and diagnostics for layer alignment, balancedness conservation, and
//! margin maximization.
//!
//! The crate is organized along the pipeline:
//!
//! * [`linalg`]: dense matrix kernels and leading singular pairs;
//! * [`model`]: the network, losses, risk, analytic gradients, initializers;
//! * [`geometry`]: max-margin certificates and the spread constant;
//! * [`dynamics`]: the two training processes;
//! * [`diagnostics`]: per-snapshot alignment and bound-slack reports;
//! * [`experiments`]: data generators, scenarios, CSV persistence;
//! * [`oracle`]: slow, independent reference implementations used by the
//!   test suites to cross-check the fast paths.

pub mod diagnostics;
pub mod dynamics;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod oracle;
