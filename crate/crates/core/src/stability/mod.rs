//! Linearized difference systems and twin experiments for the stability
//! estimates.

pub mod coefficients;
pub mod experiment;
pub mod residual;

pub use coefficients::{build_linearized_coefficients, CoefficientBounds, LinearizedCoefficients, NodeCoefficients};
pub use experiment::{
    holder_experiment, lipschitz_experiment, perturbed_problem, predicted_eta, LipschitzRun, Perturbation, StabilityFit,
};
pub use residual::{residual_of_difference_system, DifferenceResidual};
