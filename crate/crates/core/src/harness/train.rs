//! Plain SGD on the synthetic task.

use crate::adjoint::GradVector;
use crate::distributed::{distributed_adjoint_gradient, distributed_forward, plan_shards, Reduction};
use crate::error::{Error, Result};
use crate::reference::tape_gradient;
use crate::ssm::{stack_forward, StackParams};

use super::config::RunConfig;
use super::data::{Sample, SyntheticTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientSource {
    /// Sharded adjoint gradient over the configured devices.
    Adjoint,
    /// Reverse-mode tape with every layer input detached.
    DetachedTape,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    /// Mean per-token loss of each step's batch, before the update.
    pub losses: Vec<f64>,
    pub params: StackParams,
}

impl TrainLog {
    pub fn initial(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Loss and gradient summed over the batch.
pub fn batch_gradient(params: &StackParams, batch: &[Sample], cfg: &RunConfig, source: GradientSource) -> Result<(f64, GradVector)> {
    let mut total = GradVector::zeros_like(params);
    let mut loss = 0.0;
    for sample in batch {
        let (l, g) = match source {
            GradientSource::Adjoint => {
                let plan = plan_shards(params.dims.k, cfg.upsilon)?;
                let fwd = distributed_forward(&plan, params, &sample.tokens, &sample.loss)?;
                let reduction = if cfg.deterministic { Reduction::Deterministic } else { Reduction::Fast };
                let g = distributed_adjoint_gradient(&plan, &fwd.shards, cfg.truncation(), cfg.workers, reduction)?;
                (fwd.loss, g.grad)
            }
            GradientSource::DetachedTape => {
                let l = stack_forward(params, &sample.tokens, &sample.loss)?.loss;
                (l, tape_gradient(params, &sample.tokens, &sample.loss, true)?)
            }
        };
        loss += l;
        total.add_assign(&g)?;
    }
    Ok((loss, total))
}

/// Runs `cfg.steps` full-batch SGD steps on `bs` sequences drawn once from
/// the seeded task. Loss and gradient are averaged over the batch and the
/// sequence length.
pub fn train(cfg: &RunConfig, source: GradientSource) -> Result<TrainLog> {
    cfg.validate()?;
    let dims = cfg.model.dims;
    let mut params = StackParams::init(dims, cfg.model.variant, cfg.model.seed);
    let batch = SyntheticTask::new(dims.v, dims.p, cfg.model.seed).batch(dims.bs, dims.t, cfg.loss);
    let scale = 1.0 / (dims.bs * dims.t) as f64;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = batch_gradient(&params, &batch, cfg, source).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged { step, loss: f64::NAN },
            other => other,
        })?;
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        let mut flat = params.flatten();
        for (p, g) in flat.iter_mut().zip(grad.flatten()) {
            *p -= cfg.lr * scale * g;
        }
        params = StackParams::from_flat(dims, cfg.model.variant, &flat)?;
        if params.validate().is_err() {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
    }
    Ok(TrainLog { losses, params })
}
