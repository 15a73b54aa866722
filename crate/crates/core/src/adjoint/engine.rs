//! Assembles the adjoint-sharded gradient from independent VJPs.
//!
//! For every `(t, k)` the contribution `Ξ_{t,k}` is the sum of one `C` VJP
//! and, for each `i` in the window, one `A` and one `B` VJP. Contributions
//! are added into layer `k` in ascending `t`, so any schedule that computes
//! the `Ξ_{t,k}` independently and sums them in that order reproduces the
//! serial result bit for bit.

use crate::error::{Error, Result, Site};
use crate::linalg;
use crate::ssm::{omega_gradient, ForwardTrace, LayerParams, LossSpec, Net, StackParams};

use super::grad::GradVector;
use super::states::{compute_adjoint_states, transition_range, AdjointBatch};
use super::view::TraceView;
use super::vjp::{build_cotangents, vjp_head, VjpTask};

/// How far back each output token looks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Truncation {
    /// Every state `τ = 1..t`.
    #[default]
    Full,
    /// The last `T̄` states. Values at or above `T` behave like [`Truncation::Full`].
    Window(usize),
}

impl Truncation {
    /// Effective window length for sequence length `t_len`.
    pub fn tbar(self, t_len: usize) -> Result<usize> {
        match self {
            Truncation::Full => Ok(t_len),
            Truncation::Window(0) => Err(Error::Config("truncation length must be at least 1".into())),
            Truncation::Window(w) => Ok(w.min(t_len)),
        }
    }
}

/// VJP calls issued for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NetCounts {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl NetCounts {
    pub fn total(&self) -> usize {
        self.a + self.b + self.c
    }

    pub fn get(&self, net: Net) -> usize {
        match net {
            Net::A => self.a,
            Net::B => self.b,
            Net::C => self.c,
        }
    }

    pub fn add(&mut self, other: NetCounts) {
        self.a += other.a;
        self.b += other.b;
        self.c += other.c;
    }

    fn bump(&mut self, net: Net) {
        match net {
            Net::A => self.a += 1,
            Net::B => self.b += 1,
            Net::C => self.c += 1,
        }
    }
}

/// Per-layer VJP counters, index `k - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VjpCounts {
    pub per_layer: Vec<NetCounts>,
}

impl VjpCounts {
    pub fn total(&self) -> usize {
        self.per_layer.iter().map(NetCounts::total).sum()
    }

    pub fn sum(&self) -> NetCounts {
        let mut s = NetCounts::default();
        for c in &self.per_layer {
            s.add(*c);
        }
        s
    }
}

/// Adjoint states for `(t, k)` read through `view`.
pub fn adjoint_batch<V: TraceView + ?Sized>(view: &V, t: usize, k: usize, tbar: usize) -> Result<AdjointBatch> {
    let dims = view.dims();
    let transitions = transition_range(t, tbar)
        .map(|i| view.transition(i, k))
        .collect::<Result<Vec<_>>>()?;
    compute_adjoint_states(
        t,
        k,
        tbar,
        view.variant().kind,
        dims.n,
        dims.p,
        view.readout(t, k)?,
        &transitions,
    )
}

/// Runs one task against the parameters of its layer.
pub fn run_task<V: TraceView + ?Sized>(view: &V, layer: &LayerParams, task: &VjpTask) -> Result<crate::ssm::HeadParams> {
    let input = view.layer_input(task.i, task.k)?;
    let g = vjp_head(layer.head(task.kind), view.variant().activation, input, &task.cotangent)?;
    if !g.is_finite() {
        return Err(Error::NonFinite {
            stage: "vjp",
            site: Site::new(task.t, task.k).with_tau(task.i),
        });
    }
    Ok(g)
}

/// `Ξ_{t,k}`: every VJP owed by output token `t` to layer `k`, summed in
/// task order.
pub fn token_layer_contribution<V: TraceView + ?Sized>(
    view: &V,
    layer: &LayerParams,
    t: usize,
    k: usize,
    tbar: usize,
) -> Result<(LayerParams, NetCounts)> {
    let batch = adjoint_batch(view, t, k, tbar)?;
    let tasks = build_cotangents(view, &batch)?;
    let mut xi = zero_like(layer);
    let mut counts = NetCounts::default();
    for task in &tasks {
        let g = run_task(view, layer, task)?;
        xi.head_mut(task.kind).add_assign(&g);
        counts.bump(task.kind);
    }
    Ok((xi, counts))
}

/// Gradient blocks of layer `k`, accumulated over `t = 1..T` in order.
pub fn layer_gradient<V: TraceView + ?Sized>(
    view: &V,
    layer: &LayerParams,
    k: usize,
    tbar: usize,
) -> Result<(LayerParams, NetCounts)> {
    let mut acc = zero_like(layer);
    let mut counts = NetCounts::default();
    for t in 1..=view.dims().t {
        let (xi, c) = token_layer_contribution(view, layer, t, k, tbar)?;
        acc.add_assign(&xi);
        counts.add(c);
    }
    Ok((acc, counts))
}

pub(crate) fn zero_like(layer: &LayerParams) -> LayerParams {
    let z = |h: &crate::ssm::HeadParams| crate::ssm::HeadParams::zeros(h.out, h.inp);
    LayerParams {
        a: z(&layer.a),
        b: z(&layer.b),
        c: z(&layer.c),
    }
}

/// Gradient of the total loss with the given truncation, plus `Ω`'s block.
pub fn adjoint_gradient(
    params: &StackParams,
    trace: &ForwardTrace,
    loss: &LossSpec,
    truncation: Truncation,
) -> Result<GradVector> {
    adjoint_gradient_counted(params, trace, loss, truncation).map(|(g, _)| g)
}

/// [`adjoint_gradient`] together with the VJP counters.
pub fn adjoint_gradient_counted(
    params: &StackParams,
    trace: &ForwardTrace,
    loss: &LossSpec,
    truncation: Truncation,
) -> Result<(GradVector, VjpCounts)> {
    params.validate()?;
    if params.dims != trace.dims || params.variant != trace.variant {
        return Err(Error::Config("trace was produced for a different model".into()));
    }
    let tbar = truncation.tbar(trace.dims.t)?;
    let mut grad = GradVector::zeros_like(params);
    let mut counts = VjpCounts::default();
    for (idx, layer) in params.layers.iter().enumerate() {
        let (g, c) = layer_gradient(trace, layer, idx + 1, tbar)?;
        grad.layers[idx] = g;
        counts.per_layer.push(c);
    }
    grad.omega = omega_gradient(trace, loss)?;
    if !linalg::all_finite(&grad.omega) {
        return Err(Error::NonFinite {
            stage: "language head gradient",
            site: Site::new(trace.dims.t, trace.dims.k),
        });
    }
    Ok((grad, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{stack_forward, Activation, ModelDims, SsmVariant, StateKind};

    fn model(k: usize, t: usize) -> (StackParams, Vec<Vec<f64>>, LossSpec) {
        let dims = ModelDims::new(k, 3, 2, 4, t, 1).unwrap();
        let params = StackParams::init(dims, SsmVariant::new(StateKind::Diagonal, Activation::Sigmoid), 11);
        let tokens = (0..t).map(|i| vec![(i as f64 * 0.9).sin(), (i as f64 * 0.4).cos()]).collect();
        let loss = LossSpec::CrossEntropy((0..t).map(|i| (i * 3 + 1) % 4).collect());
        (params, tokens, loss)
    }

    #[test]
    fn single_token_issues_three_tasks() {
        let (params, tokens, loss) = model(1, 6);
        let trace = stack_forward(&params, &tokens, &loss).unwrap();
        let (_, c) = token_layer_contribution(&trace, &params.layers[0], 1, 1, 4).unwrap();
        assert_eq!((c.a, c.b, c.c), (1, 1, 1));
        let (_, c) = token_layer_contribution(&trace, &params.layers[0], 5, 1, 2).unwrap();
        assert_eq!(c.total(), 5);
    }

    #[test]
    fn saturated_window_is_bitwise_full() {
        let (params, tokens, loss) = model(2, 7);
        let trace = stack_forward(&params, &tokens, &loss).unwrap();
        let full = adjoint_gradient(&params, &trace, &loss, Truncation::Full).unwrap();
        for w in [7, 8, 100] {
            let g = adjoint_gradient(&params, &trace, &loss, Truncation::Window(w)).unwrap();
            assert!(g.bitwise_eq(&full));
        }
        let short = adjoint_gradient(&params, &trace, &loss, Truncation::Window(3)).unwrap();
        assert!(!short.bitwise_eq(&full));
    }

    #[test]
    fn counts_follow_window_sums() {
        let (params, tokens, loss) = model(2, 9);
        let trace = stack_forward(&params, &tokens, &loss).unwrap();
        for w in 1..=9 {
            let (_, counts) = adjoint_gradient_counted(&params, &trace, &loss, Truncation::Window(w)).unwrap();
            let expected: usize = (1..=9).map(|t: usize| t.min(w)).sum();
            for c in &counts.per_layer {
                assert_eq!((c.a, c.b, c.c), (expected, expected, 9));
            }
        }
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(Truncation::Window(0).tbar(4).is_err());
        assert_eq!(Truncation::Window(9).tbar(4).unwrap(), 4);
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let (params, tokens, loss) = model(1, 4);
        let trace = stack_forward(&params, &tokens, &loss).unwrap();
        let (other, _, _) = model(2, 4);
        assert!(adjoint_gradient(&other, &trace, &loss, Truncation::Full).is_err());
    }
}
