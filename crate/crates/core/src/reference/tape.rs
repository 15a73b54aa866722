//! A small reverse-mode tape specialised to the stacked SSM.
//!
//! Parameters are referenced by `(layer, network)` rather than copied onto
//! the tape, so the stored-scalar count measures activations only.

use crate::adjoint::GradVector;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::ssm::forward::rms;
use crate::ssm::{Activation, LossSpec, Net, StackParams, StateKind, NORM_EPS};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Token vector.
    Input,
    /// Fixed value with no upstream (initial state).
    Const,
    /// `W x + b` of head `net` in layer `k` (1-based).
    Affine { k: usize, net: Net, x: NodeId },
    Activate { u: NodeId, activation: Activation },
    /// `A h` for the given transition structure.
    Transition { a: NodeId, h: NodeId, kind: StateKind },
    /// `M x` with `M` (`rows x cols`) itself a node.
    MatVec { m: NodeId, x: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    /// RMS normalisation; the rms is kept as auxiliary storage.
    RmsNorm { x: NodeId },
    /// Identity forward, blocks the reverse sweep.
    Detach { x: NodeId },
    /// `Ω y`.
    Logits { y: NodeId },
    /// Loss at position `t` (0-based).
    Loss { o: NodeId, t: usize },
    Sum { terms: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapeNode {
    pub op: Op,
    pub value: Vec<f64>,
    pub aux: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TapeOptions {
    /// Treat every layer input `ŷ_{k-1}` as a constant.
    pub detach_layer_inputs: bool,
    /// Maximum number of stored scalars.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeCounts {
    pub nodes: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone)]
pub struct Tape<'a> {
    params: &'a StackParams,
    loss: &'a LossSpec,
    limit: Option<usize>,
    scalars: usize,
    pub nodes: Vec<TapeNode>,
}

impl<'a> Tape<'a> {
    fn new(params: &'a StackParams, loss: &'a LossSpec, limit: Option<usize>) -> Self {
        Tape {
            params,
            loss,
            limit,
            scalars: 0,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, value: Vec<f64>, aux: Vec<f64>) -> Result<NodeId> {
        self.scalars += value.len() + aux.len();
        self.nodes.push(TapeNode { op, value, aux });
        if let Some(limit) = self.limit {
            if self.scalars > limit {
                return Err(Error::TapeOverflow {
                    nodes: self.nodes.len(),
                    scalars: self.scalars,
                    limit,
                });
            }
        }
        Ok(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    fn head(&self, k: usize, net: Net) -> &'a crate::ssm::HeadParams {
        self.params.layers[k - 1].head(net)
    }

    /// Records the forward pass. The last node is the total loss.
    pub fn record(params: &'a StackParams, tokens: &[Vec<f64>], loss: &'a LossSpec, opts: TapeOptions) -> Result<Self> {
        params.validate()?;
        let dims = params.dims;
        check_len("token sequence", dims.t, tokens.len())?;
        loss.validate(dims.t, dims.v)?;
        let variant = params.variant;
        let mut tape = Tape::new(params, loss, opts.limit);

        let mut stream = Vec::with_capacity(dims.t);
        let mut inputs = Vec::with_capacity(dims.t);
        for x in tokens {
            check_len("token", dims.p, x.len())?;
            let id = tape.push(Op::Input, x.clone(), Vec::new())?;
            stream.push(id);
            inputs.push(tape.norm(id)?);
        }

        for k in 1..=dims.k {
            let mut h = tape.push(Op::Const, vec![0.0; dims.n], Vec::new())?;
            for t in 0..dims.t {
                let mut x = inputs[t];
                if opts.detach_layer_inputs {
                    x = tape.push(Op::Detach { x }, tape.val(x).to_vec(), Vec::new())?;
                }
                let a = tape.head_node(k, Net::A, x, variant.activation)?;
                let b = tape.head_node(k, Net::B, x, variant.activation)?;
                let c = tape.head_node(k, Net::C, x, variant.activation)?;
                let ah_val = crate::ssm::apply_transition(variant.kind, tape.val(a), tape.val(h));
                let ah = tape.push(Op::Transition { a, h, kind: variant.kind }, ah_val, Vec::new())?;
                let bx = tape.mat_vec(b, x, dims.n, dims.p)?;
                h = tape.add(ah, bx)?;
                let y_tilde = tape.mat_vec(c, h, dims.p, dims.n)?;
                stream[t] = tape.add(stream[t], y_tilde)?;
                if k < dims.k {
                    inputs[t] = tape.norm(stream[t])?;
                }
            }
        }

        let mut terms = Vec::with_capacity(dims.t);
        for (t, &y) in stream.iter().enumerate() {
            let o_val = linalg::mat_vec(&params.omega, dims.v, dims.p, tape.val(y));
            let o = tape.push(Op::Logits { y }, o_val, Vec::new())?;
            let (l, _) = loss.eval(t, tape.val(o));
            terms.push(tape.push(Op::Loss { o, t }, vec![l], Vec::new())?);
        }
        let total = terms.iter().map(|&id| tape.val(id)[0]).sum();
        tape.push(Op::Sum { terms }, vec![total], Vec::new())?;
        Ok(tape)
    }

    fn head_node(&mut self, k: usize, net: Net, x: NodeId, activation: Activation) -> Result<NodeId> {
        let u_val = self.head(k, net).pre_activation(self.val(x))?;
        let u = self.push(Op::Affine { k, net, x }, u_val, Vec::new())?;
        let s: Vec<f64> = self.val(u).iter().map(|&u| activation.apply(u)).collect();
        self.push(Op::Activate { u, activation }, s, Vec::new())
    }

    fn mat_vec(&mut self, m: NodeId, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = linalg::mat_vec(self.val(m), rows, cols, self.val(x));
        self.push(Op::MatVec { m, x, rows, cols }, v, Vec::new())
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.val(a).iter().zip(self.val(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a, b }, v, Vec::new())
    }

    fn norm(&mut self, x: NodeId) -> Result<NodeId> {
        let r = rms(self.val(x), NORM_EPS);
        let v = self.val(x).iter().map(|v| v / r).collect();
        self.push(Op::RmsNorm { x }, v, vec![r])
    }

    pub fn loss_value(&self) -> f64 {
        self.nodes.last().map_or(0.0, |n| n.value[0])
    }

    pub fn counts(&self) -> TapeCounts {
        TapeCounts {
            nodes: self.nodes.len(),
            scalars: self.scalars,
        }
    }

    /// Reverse sweep from the total loss; visits each node once.
    pub fn backward(&self) -> Result<GradVector> {
        let dims = self.params.dims;
        let mut grad = GradVector::zeros_like(self.params);
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        if let Some(last) = adj.last_mut() {
            last[0] = 1.0;
        }
        for id in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut adj[id]);
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let node = &self.nodes[id];
            match &node.op {
                Op::Input | Op::Const | Op::Detach { .. } => {}
                Op::Affine { k, net, x } => {
                    let head = self.head(*k, *net);
                    let xv = self.val(*x);
                    let gh = grad.head_mut(*net, *k);
                    linalg::add_assign(&mut gh.weight, &linalg::outer(&g, xv));
                    linalg::add_assign(&mut gh.bias, &g);
                    linalg::add_assign(&mut adj[*x], &linalg::vec_mat(&g, &head.weight, head.out, head.inp));
                }
                Op::Activate { u, activation } => {
                    let d: Vec<f64> = node
                        .value
                        .iter()
                        .zip(&g)
                        .map(|(&s, &g)| g * activation.derivative_from_output(s))
                        .collect();
                    linalg::add_assign(&mut adj[*u], &d);
                }
                Op::Transition { a, h, kind } => {
                    let (av, hv) = (self.val(*a), self.val(*h));
                    let n = hv.len();
                    let (ga, gh) = match kind {
                        StateKind::Unstructured => (linalg::outer(&g, hv), linalg::vec_mat(&g, av, n, n)),
                        StateKind::Diagonal => (
                            g.iter().zip(hv).map(|(g, h)| g * h).collect(),
                            g.iter().zip(av).map(|(g, a)| g * a).collect(),
                        ),
                        StateKind::Scalar => (vec![linalg::dot(&g, hv)], g.iter().map(|g| g * av[0]).collect()),
                    };
                    linalg::add_assign(&mut adj[*a], &ga);
                    linalg::add_assign(&mut adj[*h], &gh);
                }
                Op::MatVec { m, x, rows, cols } => {
                    let gm = linalg::outer(&g, self.val(*x));
                    let gx = linalg::vec_mat(&g, self.val(*m), *rows, *cols);
                    linalg::add_assign(&mut adj[*m], &gm);
                    linalg::add_assign(&mut adj[*x], &gx);
                }
                Op::Add { a, b } => {
                    linalg::add_assign(&mut adj[*a], &g);
                    linalg::add_assign(&mut adj[*b], &g);
                }
                Op::RmsNorm { x } => {
                    let r = node.aux[0];
                    let n = &node.value;
                    let proj = linalg::dot(&g, n) / n.len() as f64;
                    let gx: Vec<f64> = g.iter().zip(n).map(|(g, n)| (g - n * proj) / r).collect();
                    linalg::add_assign(&mut adj[*x], &gx);
                }
                Op::Logits { y } => {
                    linalg::add_assign(&mut grad.omega, &linalg::outer(&g, self.val(*y)));
                    let gy = linalg::vec_mat(&g, &self.params.omega, dims.v, dims.p);
                    linalg::add_assign(&mut adj[*y], &gy);
                }
                Op::Loss { o, t } => {
                    let (_, dl_do) = self.loss.eval(*t, self.val(*o));
                    let go: Vec<f64> = dl_do.iter().map(|d| d * g[0]).collect();
                    linalg::add_assign(&mut adj[*o], &go);
                }
                Op::Sum { terms } => {
                    for &term in terms {
                        adj[term][0] += g[0];
                    }
                }
            }
        }
        Ok(grad)
    }
}

/// Node and stored-scalar counts of a recorded tape.
pub fn tape_memory_count(tape: &Tape<'_>) -> TapeCounts {
    tape.counts()
}

/// Reverse-mode gradient of the total loss. With `detach_layer_inputs` the
/// gradient of layer `k` stops at its normalised input.
pub fn tape_gradient(params: &StackParams, tokens: &[Vec<f64>], loss: &LossSpec, detach_layer_inputs: bool) -> Result<GradVector> {
    let opts = TapeOptions {
        detach_layer_inputs,
        limit: None,
    };
    Tape::record(params, tokens, loss, opts)?.backward()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{stack_forward, ModelDims, SsmVariant};

    fn model(k: usize, t: usize, kind: StateKind, act: Activation) -> (StackParams, Vec<Vec<f64>>, LossSpec) {
        let dims = ModelDims::new(k, 3, 2, 4, t, 1).unwrap();
        let params = StackParams::init(dims, SsmVariant::new(kind, act), 5);
        let tokens = (0..t).map(|i| vec![(i as f64 * 0.7 + 0.2).sin(), (i as f64 * 1.3).cos()]).collect();
        let loss = LossSpec::CrossEntropy((0..t).map(|i| (2 * i + 1) % 4).collect());
        (params, tokens, loss)
    }

    #[test]
    fn loss_matches_forward_pass() {
        for kind in [StateKind::Unstructured, StateKind::Diagonal, StateKind::Scalar] {
            let (params, tokens, loss) = model(3, 5, kind, Activation::Tanh);
            let tape = Tape::record(&params, &tokens, &loss, TapeOptions::default()).unwrap();
            let trace = stack_forward(&params, &tokens, &loss).unwrap();
            assert_eq!(tape.loss_value(), trace.loss);
        }
    }

    #[test]
    fn single_layer_detach_is_irrelevant() {
        let (params, tokens, loss) = model(1, 4, StateKind::Diagonal, Activation::Sigmoid);
        let a = tape_gradient(&params, &tokens, &loss, false).unwrap();
        let b = tape_gradient(&params, &tokens, &loss, true).unwrap();
        assert!(a.bitwise_eq(&b));
    }

    #[test]
    fn hand_enumerated_single_step() {
        let (n, p, v) = (3, 2, 4);
        for kind in [StateKind::Unstructured, StateKind::Diagonal, StateKind::Scalar] {
            let (params, tokens, loss) = model(1, 1, kind, Activation::Identity);
            let out_a = params.variant.transition_len(n);
            // x, ŷ0 (+ rms), u_A, A, u_B, B, u_C, C, h0, A h, B x, h, ỹ, y1, o, l, L
            let expected = p + (p + 1) + 2 * out_a + 2 * n * p + 2 * p * n + n + 3 * n + 2 * p + v + 1 + 1;
            let tape = Tape::record(&params, &tokens, &loss, TapeOptions::default()).unwrap();
            assert_eq!(tape_memory_count(&tape).scalars, expected, "{kind}");
            assert_eq!(tape_memory_count(&tape).nodes, 17);
            let detached = Tape::record(
                &params,
                &tokens,
                &loss,
                TapeOptions {
                    detach_layer_inputs: true,
                    limit: None,
                },
            )
            .unwrap();
            assert_eq!(tape_memory_count(&detached).scalars, expected + p);
        }
    }

    #[test]
    fn overflow_reports_counts() {
        let (params, tokens, loss) = model(2, 6, StateKind::Diagonal, Activation::Identity);
        let opts = TapeOptions {
            detach_layer_inputs: false,
            limit: Some(50),
        };
        match Tape::record(&params, &tokens, &loss, opts) {
            Err(Error::TapeOverflow { scalars, limit, nodes }) => {
                assert_eq!(limit, 50);
                assert!(scalars > 50 && nodes > 0);
            }
            other => panic!("expected overflow, got {:?}", other.map(|t| t.counts())),
        }
    }

    #[test]
    fn count_is_monotone_in_t() {
        let mut prev = 0;
        for t in 1..8 {
            let (params, tokens, loss) = model(2, t, StateKind::Diagonal, Activation::Identity);
            let c = Tape::record(&params, &tokens, &loss, TapeOptions::default()).unwrap().counts();
            assert!(c.scalars > prev);
            prev = c.scalars;
        }
    }
}
