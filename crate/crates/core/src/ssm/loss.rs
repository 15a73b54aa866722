use crate::error::{check_len, Error, Result};

/// Per-token loss and its targets. The total loss is the plain sum over `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// Softmax cross-entropy against one token index per position.
    CrossEntropy(Vec<usize>),
    /// `‖o − target‖² / V` per position; each target has the logit length `V`.
    Mse(Vec<Vec<f64>>),
}

impl LossSpec {
    pub fn len(&self) -> usize {
        match self {
            LossSpec::CrossEntropy(t) => t.len(),
            LossSpec::Mse(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self, t: usize, v: usize) -> Result<()> {
        check_len("loss targets", t, self.len())?;
        match self {
            LossSpec::CrossEntropy(targets) => {
                if let Some(bad) = targets.iter().find(|&&x| x >= v) {
                    return Err(Error::Config(format!("target token {bad} outside vocabulary of {v}")));
                }
            }
            LossSpec::Mse(targets) => {
                for target in targets {
                    check_len("mse target", v, target.len())?;
                }
            }
        }
        Ok(())
    }

    /// Loss at position `t` (0-based) and its gradient with respect to the logits.
    pub fn eval(&self, t: usize, logits: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossSpec::CrossEntropy(targets) => {
                let target = targets[t];
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logits.iter().map(|&o| (o - max).exp()).sum();
                let lse = max + sum.ln();
                let mut grad: Vec<f64> = logits.iter().map(|&o| (o - lse).exp()).collect();
                grad[target] -= 1.0;
                (lse - logits[target], grad)
            }
            LossSpec::Mse(targets) => {
                let target = &targets[t];
                let v = logits.len() as f64;
                let diff: Vec<f64> = logits.iter().zip(target).map(|(o, y)| o - y).collect();
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / v;
                (loss, diff.iter().map(|d| 2.0 * d / v).collect())
            }
        }
    }
}
