//! Central finite differences over every parameter coordinate.

use rayon::prelude::*;

use crate::adjoint::GradVector;
use crate::error::{Error, Result};
use crate::ssm::{stack_forward, LossSpec, StackParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub epsilon: f64,
    /// Scale the step by `max(1, |θ_j|)`.
    pub relative_step: bool,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            epsilon: 1e-5,
            relative_step: true,
        }
    }
}

impl FdConfig {
    pub fn step(&self, theta: f64) -> f64 {
        if self.relative_step {
            self.epsilon * theta.abs().max(1.0)
        } else {
            self.epsilon
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("finite-difference epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `(f(θ + ε e_j) − f(θ − ε e_j)) / 2ε` for every `j`, in parallel.
/// A failure or non-finite value at a perturbed point reports `j`.
pub fn central_differences<F>(f: F, theta: &[f64], cfg: &FdConfig) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let eps = cfg.step(theta[j]);
            let mut probe = theta.to_vec();
            probe[j] = theta[j] + eps;
            let plus = f(&probe).map_err(|_| Error::PerturbedLoss { coordinate: j })?;
            probe[j] = theta[j] - eps;
            let minus = f(&probe).map_err(|_| Error::PerturbedLoss { coordinate: j })?;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::PerturbedLoss { coordinate: j });
            }
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect()
}

/// Finite-difference gradient of the total loss, in the flat gradient layout.
pub fn finite_difference_gradient(
    params: &StackParams,
    tokens: &[Vec<f64>],
    loss: &LossSpec,
    cfg: &FdConfig,
) -> Result<GradVector> {
    params.validate()?;
    let (dims, variant) = (params.dims, params.variant);
    let objective = |flat: &[f64]| -> Result<f64> {
        let p = StackParams::from_flat(dims, variant, flat)?;
        Ok(stack_forward(&p, tokens, loss)?.loss)
    };
    let flat = central_differences(objective, &params.flatten(), cfg)?;
    GradVector::from_flat(dims, variant, &flat)
}
