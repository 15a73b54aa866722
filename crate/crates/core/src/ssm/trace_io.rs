//! Binary trace dump for diffing against other implementations.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic  b"SSMTRACE"
//! u32    format version (1)
//! u64 x6 K, N, P, V, T, bs
//! u8     state kind (0 unstructured, 1 diagonal, 2 scalar)
//! u8     activation (0 identity, 1 sigmoid, 2 tanh)
//! f64[]  A      k = 1..K, t = 1..T
//! f64[]  C      k = 1..K, t = 1..T
//! f64[]  h      k = 1..K, t = 0..T
//! f64[]  ŷ      k = 0..K-1, t = 1..T
//! f64[]  y_K    t = 1..T
//! f64[]  o      t = 1..T
//! f64[]  dl/dy_K t = 1..T
//! f64[]  l^t    t = 1..T
//! f64    L
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::dims::{Activation, ModelDims, SsmVariant, StateKind};
use super::forward::ForwardTrace;

const MAGIC: &[u8; 8] = b"SSMTRACE";
const VERSION: u32 = 1;

fn kind_code(kind: StateKind) -> u8 {
    match kind {
        StateKind::Unstructured => 0,
        StateKind::Diagonal => 1,
        StateKind::Scalar => 2,
    }
}

fn act_code(act: Activation) -> u8 {
    match act {
        Activation::Identity => 0,
        Activation::Sigmoid => 1,
        Activation::Tanh => 2,
    }
}

pub fn write_trace<W: Write>(trace: &ForwardTrace, mut w: W) -> Result<()> {
    let d = &trace.dims;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [d.k, d.n, d.p, d.v, d.t, d.bs] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&[kind_code(trace.variant.kind), act_code(trace.variant.activation)])?;
    let mut put = |xs: &[f64]| -> Result<()> {
        for x in xs {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for group in [&trace.a, &trace.c, &trace.h, &trace.y_hat] {
        for v in group.iter().flatten() {
            put(v)?;
        }
    }
    for group in [&trace.y_final, &trace.logits, &trace.cotangent] {
        for v in group {
            put(v)?;
        }
    }
    put(&trace.token_losses)?;
    put(&[trace.loss])?;
    Ok(())
}

pub fn read_trace<R: Read>(mut r: R) -> Result<ForwardTrace> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a trace dump".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(Error::Config("unsupported trace version".into()));
    }
    let mut b8 = [0u8; 8];
    let mut dims = [0usize; 6];
    for d in &mut dims {
        r.read_exact(&mut b8)?;
        *d = u64::from_le_bytes(b8) as usize;
    }
    let dims = ModelDims::new(dims[0], dims[1], dims[2], dims[3], dims[4], dims[5])?;
    let mut codes = [0u8; 2];
    r.read_exact(&mut codes)?;
    let kind = match codes[0] {
        0 => StateKind::Unstructured,
        1 => StateKind::Diagonal,
        2 => StateKind::Scalar,
        c => return Err(Error::Config(format!("bad state kind code {c}"))),
    };
    let activation = match codes[1] {
        0 => Activation::Identity,
        1 => Activation::Sigmoid,
        2 => Activation::Tanh,
        c => return Err(Error::Config(format!("bad activation code {c}"))),
    };
    let variant = SsmVariant::new(kind, activation);
    let mut vec = |len: usize| -> Result<Vec<f64>> {
        (0..len)
            .map(|_| {
                r.read_exact(&mut b8)?;
                Ok(f64::from_le_bytes(b8))
            })
            .collect()
    };
    let (k, n, p, t) = (dims.k, dims.n, dims.p, dims.t);
    let a_len = variant.transition_len(n);
    let mut grid = |layers: usize, steps: usize, len: usize| -> Result<Vec<Vec<Vec<f64>>>> {
        (0..layers)
            .map(|_| (0..steps).map(|_| vec(len)).collect())
            .collect()
    };
    let a = grid(k, t, a_len)?;
    let c = grid(k, t, p * n)?;
    let h = grid(k, t + 1, n)?;
    let y_hat = grid(k, t, p)?;
    let mut seq = |len: usize| -> Result<Vec<Vec<f64>>> { (0..t).map(|_| vec(len)).collect() };
    let y_final = seq(p)?;
    let logits = seq(dims.v)?;
    let cotangent = seq(p)?;
    let token_losses = vec(t)?;
    let loss = vec(1)?[0];
    Ok(ForwardTrace {
        dims,
        variant,
        a,
        c,
        h,
        y_hat,
        y_final,
        logits,
        cotangent,
        token_losses,
        loss,
    })
}
