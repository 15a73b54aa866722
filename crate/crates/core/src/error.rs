use std::io;

use thiserror::Error;

/// Location of a numeric failure inside the (t, k) grid. `tau` is set when
/// the failure happened inside an adjoint-state product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Site {
    pub t: usize,
    pub k: usize,
    pub tau: Option<usize>,
    pub device: Option<usize>,
}

impl Site {
    pub fn new(t: usize, k: usize) -> Self {
        Site { t, k, tau: None, device: None }
    }

    pub fn with_tau(mut self, tau: usize) -> Self {
        self.tau = Some(tau);
        self
    }

    pub fn on_device(mut self, device: usize) -> Self {
        self.device = Some(device);
        self
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t={} k={}", self.t, self.k)?;
        if let Some(tau) = self.tau {
            write!(f, " tau={tau}")?;
        }
        if let Some(d) = self.device {
            write!(f, " device={d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {stage} at {site}")]
    NonFinite { stage: &'static str, site: Site },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("locality violation: device {device} read {tensor} for layer {k} (t={t})")]
    Locality {
        tensor: &'static str,
        device: usize,
        k: usize,
        t: usize,
    },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("tape overflow: {nodes} nodes holding {scalars} scalars exceed the limit of {limit}")]
    TapeOverflow {
        nodes: usize,
        scalars: usize,
        limit: usize,
    },

    #[error("non-finite loss at perturbed coordinate {coordinate}")]
    PerturbedLoss { coordinate: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            what: what.to_string(),
            expected,
            got,
        });
    }
    Ok(())
}
