//! Stored-number curves of the adjoint trace against a reverse-mode tape.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::reference::{Tape, TapeOptions};
use crate::ssm::{LossSpec, ModelDims, SsmVariant, StackParams};

use super::counts::{trace_storage_count, VjpCountSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryCurveRow {
    pub context_length: usize,
    pub adjoint_numbers: u64,
    /// `None` when the tape hit its limit.
    pub tape_numbers: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConfig {
    pub k: usize,
    pub n: usize,
    pub p: usize,
    pub v: usize,
    pub variant: SsmVariant,
    pub seed: u64,
    pub tape_limit: Option<usize>,
}

/// For each context length: trace plus parameter numbers against the
/// scalars a full reverse-mode tape records.
pub fn adjoint_vs_backprop_memory_curve(cfg: &CurveConfig, lengths: &[usize]) -> Result<Vec<MemoryCurveRow>> {
    lengths
        .iter()
        .map(|&t| {
            let dims = ModelDims::new(cfg.k, cfg.n, cfg.p, cfg.v, t, 1)?;
            let params = StackParams::init(dims, cfg.variant, cfg.seed);
            let tokens: Vec<Vec<f64>> = (0..t)
                .map(|i| (0..cfg.p).map(|j| ((i * cfg.p + j) as f64 * 0.61).sin()).collect())
                .collect();
            let loss = LossSpec::CrossEntropy((0..t).map(|i| i % cfg.v).collect());
            let opts = TapeOptions {
                detach_layer_inputs: false,
                limit: cfg.tape_limit,
            };
            let tape_numbers = match Tape::record(&params, &tokens, &loss, opts) {
                Ok(tape) => Some(tape.counts().scalars as u64),
                Err(Error::TapeOverflow { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(MemoryCurveRow {
                context_length: t,
                adjoint_numbers: trace_storage_count(t, cfg.k, cfg.n, cfg.p).with_params,
                tape_numbers,
            })
        })
        .collect()
}

/// Least-squares line through `(x, y)`: slope, intercept and `R²`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

pub fn memory_curve_csv(rows: &[MemoryCurveRow]) -> String {
    let mut s = String::from("context_length,adjoint_numbers,tape_numbers\n");
    for r in rows {
        let tape = r.tape_numbers.map_or_else(|| "censored".to_string(), |x| x.to_string());
        let _ = writeln!(s, "{},{},{}", r.context_length, r.adjoint_numbers, tape);
    }
    s
}

pub fn vjp_counts_csv(rows: &[VjpCountSummary]) -> String {
    let mut s = String::from("T,Tbar,full_vjps,truncated_vjps\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.t, r.tbar, r.full_per_ab, r.truncated_per_ab);
    }
    s
}
