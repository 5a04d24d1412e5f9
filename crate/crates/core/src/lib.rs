//! Age-structured birth-death populations: exact particle simulation, the
//! deterministic McKendrick-Von Foerster limit, kernel estimators of the age
//! density and death rate with Goldenshluger-Lepski bandwidth selection, and
//! a Monte Carlo harness around them.

pub mod cli;
pub mod diagnostics;
pub mod estimation;
pub mod experiment;
pub mod kernels;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod solver;

pub use estimation::EstimationError;
pub use experiment::ExperimentError;
pub use kernels::KernelError;
pub use model::ModelError;
pub use sim::SimError;
pub use solver::SolverError;
