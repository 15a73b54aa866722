//! Vector-Jacobian products of the affine heads and the per-`(t, k)` task list.

use crate::error::{check_len, Result};
use crate::linalg;
use crate::ssm::{Activation, HeadParams, Net, StateKind};

use super::states::AdjointBatch;
use super::view::TraceView;

/// One independent VJP: cotangent `cotangent` pulled back through head
/// `kind` of layer `k` evaluated at input index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct VjpTask {
    pub t: usize,
    pub k: usize,
    pub i: usize,
    pub kind: Net,
    /// Shaped like the head output (flattened).
    pub cotangent: Vec<f64>,
}

/// Closed-form VJP of `φ(W x + b)`: with `g = M ∘ φ'(u)` the weight
/// gradient is `g ⊗ x` and the bias gradient is `g`.
pub fn vjp_head(head: &HeadParams, activation: Activation, input: &[f64], cotangent: &[f64]) -> Result<HeadParams> {
    check_len("vjp cotangent", head.out, cotangent.len())?;
    let u = head.pre_activation(input)?;
    let g: Vec<f64> = match activation {
        Activation::Identity => cotangent.to_vec(),
        _ => u
            .iter()
            .zip(cotangent)
            .map(|(&u, &m)| m * activation.derivative_from_output(activation.apply(u)))
            .collect(),
    };
    Ok(HeadParams {
        out: head.out,
        inp: head.inp,
        weight: linalg::outer(&g, input),
        bias: g,
    })
}

/// Cotangent for the transition head given `μ = (dl/dy_K) λ` and `h^{i-1}`.
pub(crate) fn transition_cotangent(kind: StateKind, mu: &[f64], h_prev: &[f64]) -> Vec<f64> {
    match kind {
        StateKind::Unstructured => linalg::outer(mu, h_prev),
        StateKind::Diagonal => mu.iter().zip(h_prev).map(|(m, h)| m * h).collect(),
        StateKind::Scalar => vec![linalg::dot(mu, h_prev)],
    }
}

/// Emits the `C` task for `i = t`, then for each `i` in the window the `A`
/// task with cotangent `(dl/dy_K^t λ^{t,i}) ⊗ h^{i-1}` and the `B` task with
/// cotangent `(dl/dy_K^t λ^{t,i}) ⊗ ŷ_{k-1}^i`.
pub fn build_cotangents<V: TraceView + ?Sized>(view: &V, batch: &AdjointBatch) -> Result<Vec<VjpTask>> {
    let (t, k) = (batch.t, batch.k);
    let dims = view.dims();
    let kind = view.variant().kind;
    let dl_dy = view.output_cotangent(t)?;
    check_len("output cotangent", dims.p, dl_dy.len())?;

    let mut tasks = Vec::with_capacity(1 + 2 * batch.len());
    tasks.push(VjpTask {
        t,
        k,
        i: t,
        kind: Net::C,
        cotangent: linalg::outer(dl_dy, view.state(t, k)?),
    });
    for i in batch.taus() {
        let mu = linalg::vec_mat(dl_dy, batch.lambda_at(i), dims.p, dims.n);
        tasks.push(VjpTask {
            t,
            k,
            i,
            kind: Net::A,
            cotangent: transition_cotangent(kind, &mu, view.state(i - 1, k)?),
        });
        tasks.push(VjpTask {
            t,
            k,
            i,
            kind: Net::B,
            cotangent: linalg::outer(&mu, view.layer_input(i, k)?),
        });
    }
    Ok(tasks)
}
