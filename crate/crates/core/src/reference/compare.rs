//! Blockwise comparison of two gradients.

use std::fmt;

use crate::adjoint::GradVector;
use crate::error::{check_len, Result};

/// A coordinate agrees when `|a − b| ≤ atol` or
/// `|a − b| / max(|a|, |b|) ≤ rtol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Tolerance { rtol, atol }
    }

    pub fn accepts(&self, a: f64, b: f64) -> bool {
        let d = (a - b).abs();
        d <= self.atol || d <= self.rtol * a.abs().max(b.abs())
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    pub name: String,
    pub max_abs: f64,
    pub max_rel: f64,
    pub mean_rel: f64,
    /// Coordinates outside the tolerance.
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub tolerance: Tolerance,
    pub blocks: Vec<BlockStats>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.failures == 0)
    }

    pub fn max_rel(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_abs).fold(0.0, f64::max)
    }

    /// Block with the most failures, ties broken by relative error.
    pub fn worst_block(&self) -> Option<&BlockStats> {
        self.blocks
            .iter()
            .max_by(|a, b| (a.failures, a.max_rel).partial_cmp(&(b.failures, b.max_rel)).expect("finite"))
    }

    pub fn failing_blocks(&self) -> impl Iterator<Item = &BlockStats> {
        self.blocks.iter().filter(|b| b.failures > 0)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>12} {:>12} {:>12} {:>6}",
            "block", "max_abs", "max_rel", "mean_rel", "fail"
        )?;
        for b in &self.blocks {
            writeln!(
                f,
                "{:<12} {:>12.3e} {:>12.3e} {:>12.3e} {:>6}",
                b.name, b.max_abs, b.max_rel, b.mean_rel, b.failures
            )?;
        }
        write!(
            f,
            "{} (rtol {:.0e}, atol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance.rtol,
            self.tolerance.atol
        )
    }
}

pub fn compare_gradients(a: &GradVector, b: &GradVector, tolerance: Tolerance) -> Result<Comparison> {
    let (fa, fb) = (a.flatten(), b.flatten());
    check_len("compared gradient", fa.len(), fb.len())?;
    let blocks = a
        .layout()
        .blocks
        .into_iter()
        .map(|block| {
            let range = block.offset..block.offset + block.len;
            let (xs, ys) = (&fa[range.clone()], &fb[range]);
            let mut stats = BlockStats {
                name: block.name,
                max_abs: 0.0,
                max_rel: 0.0,
                mean_rel: 0.0,
                failures: 0,
            };
            for (&x, &y) in xs.iter().zip(ys) {
                let rel = relative_error(x, y);
                stats.max_abs = stats.max_abs.max((x - y).abs());
                stats.max_rel = stats.max_rel.max(rel);
                stats.mean_rel += rel;
                if !tolerance.accepts(x, y) {
                    stats.failures += 1;
                }
            }
            if !xs.is_empty() {
                stats.mean_rel /= xs.len() as f64;
            }
            stats
        })
        .collect();
    Ok(Comparison { tolerance, blocks })
}
