//! Forward dynamics of the stacked SSM: per-token heads, the linear state
//! recurrence, RMS normalisation between layers, and the language head.
//!
//! For layer `k` and token `t`, with `x = ŷ_{k-1}^t`:
//!
//! ```text
//! A = 𝒜_k(x)   B = ℬ_k(x)   C = 𝒞_k(x)
//! h^t = A h^{t-1} + B x
//! ỹ^t = C h^t
//! y_k^t = y_{k-1}^t + ỹ^t      ŷ_k^t = Norm(y_k^t)
//! ```
//!
//! The residual stream starts at the raw tokens (`y_0 = x`) while the first
//! layer reads `ŷ_0 = Norm(x)`. Logits are `o^t = Ω y_K^t`.

use crate::error::{check_len, Error, Result, Site};
use crate::linalg;

use super::dims::{Activation, ModelDims, SsmVariant, StateKind};
use super::loss::LossSpec;
use super::params::{HeadParams, LayerParams, StackParams};

/// Stabiliser inside the RMS normalisation.
pub const NORM_EPS: f64 = 1e-6;

/// `φ(W x + b)`. A non-finite output is reported at `site`.
pub fn head_eval(params: &HeadParams, x: &[f64], activation: Activation, site: Site) -> Result<Vec<f64>> {
    let mut u = params.pre_activation(x)?;
    for v in &mut u {
        *v = activation.apply(*v);
    }
    if !linalg::all_finite(&u) {
        return Err(Error::NonFinite { stage: "head output", site });
    }
    Ok(u)
}

/// `v / sqrt(mean(v²) + eps)`, no learnable gain.
pub fn normalize_with(v: &[f64], eps: f64) -> Vec<f64> {
    let rms = rms(v, eps);
    v.iter().map(|x| x / rms).collect()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    normalize_with(v, NORM_EPS)
}

pub(crate) fn rms(v: &[f64], eps: f64) -> f64 {
    let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    (ms + eps).sqrt()
}

/// `A h` for the three transition structures.
pub fn apply_transition(kind: StateKind, a: &[f64], h: &[f64]) -> Vec<f64> {
    let n = h.len();
    match kind {
        StateKind::Unstructured => linalg::mat_vec(a, n, n, h),
        StateKind::Diagonal => a.iter().zip(h).map(|(a, h)| a * h).collect(),
        StateKind::Scalar => h.iter().map(|h| a[0] * h).collect(),
    }
}

/// Everything one layer computes over the sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutputs {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// `T + 1` states, starting with `h^0`.
    pub h: Vec<Vec<f64>>,
    pub y_tilde: Vec<Vec<f64>>,
}

/// Runs one SSM layer over `inputs` starting from `h0`. `k` only labels errors.
pub fn ssm_layer_forward(
    layer: &LayerParams,
    variant: &SsmVariant,
    inputs: &[Vec<f64>],
    h0: &[f64],
    k: usize,
) -> Result<LayerOutputs> {
    let n = h0.len();
    let p = layer.b.inp;
    check_len("layer B head", n * p, layer.b.out)?;
    check_len("layer A head", variant.transition_len(n), layer.a.out)?;
    let t_len = inputs.len();
    let mut out = LayerOutputs {
        a: Vec::with_capacity(t_len),
        b: Vec::with_capacity(t_len),
        c: Vec::with_capacity(t_len),
        h: Vec::with_capacity(t_len + 1),
        y_tilde: Vec::with_capacity(t_len),
    };
    out.h.push(h0.to_vec());
    for (idx, x) in inputs.iter().enumerate() {
        let site = Site::new(idx + 1, k);
        check_len("layer input", p, x.len())?;
        let a = head_eval(&layer.a, x, variant.activation, site)?;
        let b = head_eval(&layer.b, x, variant.activation, site)?;
        let c = head_eval(&layer.c, x, variant.activation, site)?;
        let mut h = apply_transition(variant.kind, &a, &out.h[idx]);
        linalg::add_assign(&mut h, &linalg::mat_vec(&b, n, p, x));
        if !linalg::all_finite(&h) {
            return Err(Error::NonFinite { stage: "hidden state", site });
        }
        let y = linalg::mat_vec(&c, p, n, &h);
        out.a.push(a);
        out.b.push(b);
        out.c.push(c);
        out.h.push(h);
        out.y_tilde.push(y);
    }
    Ok(out)
}

/// Tensors retained after the forward pass. Per-layer sequences are indexed
/// with 1-based `t` and `k` through the accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub dims: ModelDims,
    pub variant: SsmVariant,
    /// `A_k^t`, `t = 1..T` (the `t = 1` slot is kept for uniform indexing).
    pub a: Vec<Vec<Vec<f64>>>,
    /// `C_k^t`, `P x N`.
    pub c: Vec<Vec<Vec<f64>>>,
    /// `h_k^t`, `t = 0..T`.
    pub h: Vec<Vec<Vec<f64>>>,
    /// `ŷ_k^t` for `k = 0..K-1`: the normalised input of layer `k + 1`.
    pub y_hat: Vec<Vec<Vec<f64>>>,
    /// `y_K^t`.
    pub y_final: Vec<Vec<f64>>,
    /// `o^t = Ω y_K^t`.
    pub logits: Vec<Vec<f64>>,
    /// `dl(o^t)/dy_K^t = Ωᵀ dl/do^t`.
    pub cotangent: Vec<Vec<f64>>,
    pub token_losses: Vec<f64>,
    pub loss: f64,
}

/// Scalar counts of the retained tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageBreakdown {
    pub a: usize,
    pub c: usize,
    /// Excludes the fixed `h^0`.
    pub h: usize,
    pub y_hat: usize,
    pub cotangent: usize,
}

impl StorageBreakdown {
    /// Transitions, states, layer inputs and cotangents: the set the
    /// analytic storage formula accounts for.
    pub fn accounted(&self) -> usize {
        self.a + self.h + self.y_hat + self.cotangent
    }

    pub fn resident(&self) -> usize {
        self.accounted() + self.c
    }
}

impl ForwardTrace {
    pub fn transition(&self, t: usize, k: usize) -> &[f64] {
        &self.a[k - 1][t - 1]
    }

    pub fn readout(&self, t: usize, k: usize) -> &[f64] {
        &self.c[k - 1][t - 1]
    }

    pub fn state(&self, t: usize, k: usize) -> &[f64] {
        &self.h[k - 1][t]
    }

    /// `ŷ_{k-1}^t`, the input seen by layer `k`.
    pub fn layer_input(&self, t: usize, k: usize) -> &[f64] {
        &self.y_hat[k - 1][t - 1]
    }

    pub fn output_cotangent(&self, t: usize) -> &[f64] {
        &self.cotangent[t - 1]
    }

    pub fn storage(&self) -> StorageBreakdown {
        let count = |v: &Vec<Vec<Vec<f64>>>, skip: usize| -> usize {
            v.iter().flat_map(|layer| layer.iter().skip(skip)).map(Vec::len).sum()
        };
        StorageBreakdown {
            a: count(&self.a, 0),
            c: count(&self.c, 0),
            h: count(&self.h, 1),
            y_hat: count(&self.y_hat, 0),
            cotangent: self.cotangent.iter().map(Vec::len).sum(),
        }
    }
}

/// Full forward pass. `tokens` are the `T` input vectors.
pub fn stack_forward(params: &StackParams, tokens: &[Vec<f64>], loss: &LossSpec) -> Result<ForwardTrace> {
    let dims = params.dims;
    check_len("token sequence", dims.t, tokens.len())?;
    for x in tokens {
        check_len("token", dims.p, x.len())?;
    }
    loss.validate(dims.t, dims.v)?;

    let mut stream: Vec<Vec<f64>> = tokens.to_vec();
    let mut inputs: Vec<Vec<f64>> = tokens.iter().map(|x| normalize(x)).collect();
    let h0 = vec![0.0; dims.n];
    let mut trace_a = Vec::with_capacity(dims.k);
    let mut trace_c = Vec::with_capacity(dims.k);
    let mut trace_h = Vec::with_capacity(dims.k);
    let mut trace_y_hat = Vec::with_capacity(dims.k);

    for (idx, layer) in params.layers.iter().enumerate() {
        let out = ssm_layer_forward(layer, &params.variant, &inputs, &h0, idx + 1)?;
        for (y, y_tilde) in stream.iter_mut().zip(&out.y_tilde) {
            linalg::add_assign(y, y_tilde);
        }
        let next_inputs = stream.iter().map(|y| normalize(y)).collect();
        trace_y_hat.push(std::mem::replace(&mut inputs, next_inputs));
        trace_a.push(out.a);
        trace_c.push(out.c);
        trace_h.push(out.h);
    }

    let head = language_head(&params.omega, &dims, &stream, loss)?;
    Ok(ForwardTrace {
        dims,
        variant: params.variant,
        a: trace_a,
        c: trace_c,
        h: trace_h,
        y_hat: trace_y_hat,
        y_final: stream,
        logits: head.logits,
        cotangent: head.cotangent,
        token_losses: head.token_losses,
        loss: head.loss,
    })
}

pub(crate) struct HeadOutputs {
    pub logits: Vec<Vec<f64>>,
    pub cotangent: Vec<Vec<f64>>,
    pub token_losses: Vec<f64>,
    pub loss: f64,
}

/// Logits, losses and residual-stream cotangents from `y_K`.
pub(crate) fn language_head(
    omega: &[f64],
    dims: &ModelDims,
    y_final: &[Vec<f64>],
    loss: &LossSpec,
) -> Result<HeadOutputs> {
    check_len("omega", dims.v * dims.p, omega.len())?;
    let mut out = HeadOutputs {
        logits: Vec::with_capacity(dims.t),
        cotangent: Vec::with_capacity(dims.t),
        token_losses: Vec::with_capacity(dims.t),
        loss: 0.0,
    };
    for (idx, y) in y_final.iter().enumerate() {
        let o = linalg::mat_vec(omega, dims.v, dims.p, y);
        let (l, dl_do) = loss.eval(idx, &o);
        if !l.is_finite() {
            return Err(Error::NonFinite { stage: "loss", site: Site::new(idx + 1, dims.k) });
        }
        out.cotangent.push(linalg::vec_mat(&dl_do, omega, dims.v, dims.p));
        out.logits.push(o);
        out.token_losses.push(l);
        out.loss += l;
    }
    Ok(out)
}

/// `Σ_t (dl/do^t) ⊗ y_K^t`, shaped `V x P`.
pub fn omega_gradient(trace: &ForwardTrace, loss: &LossSpec) -> Result<Vec<f64>> {
    omega_gradient_from(&trace.logits, &trace.y_final, loss, trace.dims.v, trace.dims.p)
}

pub(crate) fn omega_gradient_from(
    logits: &[Vec<f64>],
    y_final: &[Vec<f64>],
    loss: &LossSpec,
    v: usize,
    p: usize,
) -> Result<Vec<f64>> {
    check_len("logit sequence", logits.len(), y_final.len())?;
    let mut grad = vec![0.0; v * p];
    for (idx, (o, y)) in logits.iter().zip(y_final).enumerate() {
        check_len("logits", v, o.len())?;
        check_len("final stream", p, y.len())?;
        let (_, dl_do) = loss.eval(idx, o);
        linalg::add_assign(&mut grad, &linalg::outer(&dl_do, y));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::dims::Net;

    fn const_layer(n: usize, p: usize, kind: StateKind, a: f64, b: f64, c: f64) -> LayerParams {
        let dims = ModelDims::new(1, n, p, 2, 1, 1).unwrap();
        let variant = SsmVariant::new(kind, Activation::Identity);
        let mut layer = LayerParams::zeros(&dims, &variant);
        layer.a.bias.iter_mut().for_each(|x| *x = a);
        layer.b.bias.iter_mut().for_each(|x| *x = b);
        layer.c.bias.iter_mut().for_each(|x| *x = c);
        layer
    }

    #[test]
    fn head_eval_trivial_cases() {
        let mut head = HeadParams::zeros(2, 3);
        let x = [1.0, -2.0, 0.5];
        assert_eq!(head_eval(&head, &x, Activation::Identity, Site::default()).unwrap(), vec![0.0, 0.0]);
        head.bias = vec![0.25, -4.0];
        assert_eq!(head_eval(&head, &x, Activation::Identity, Site::default()).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn head_eval_sigmoid_scalar() {
        let head = HeadParams { out: 1, inp: 1, weight: vec![2.0], bias: vec![0.5] };
        let y = head_eval(&head, &[1.0], Activation::Sigmoid, Site::default()).unwrap();
        // σ(2.5)
        assert!((y[0] - 0.924_141_819_978_756_6).abs() < 1e-15);
    }

    #[test]
    fn head_eval_errors() {
        let head = HeadParams::zeros(2, 3);
        assert!(matches!(
            head_eval(&head, &[1.0], Activation::Identity, Site::default()),
            Err(Error::Shape { .. })
        ));
        let big = HeadParams { out: 1, inp: 1, weight: vec![f64::MAX], bias: vec![f64::MAX] };
        let err = head_eval(&big, &[2.0], Activation::Identity, Site::new(3, 2)).unwrap_err();
        match err {
            Error::NonFinite { site, .. } => assert_eq!((site.t, site.k), (3, 2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn layer_zero_params_give_zero_dynamics() {
        let layer = const_layer(2, 3, StateKind::Diagonal, 0.0, 0.0, 0.0);
        let variant = SsmVariant::new(StateKind::Diagonal, Activation::Identity);
        let inputs = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 4.0]];
        let out = ssm_layer_forward(&layer, &variant, &inputs, &[0.0, 0.0], 1).unwrap();
        assert!(out.h.iter().flatten().all(|&v| v == 0.0));
        assert!(out.y_tilde.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_unit_heads_accumulate() {
        let layer = const_layer(1, 1, StateKind::Diagonal, 1.0, 1.0, 1.0);
        let variant = SsmVariant::new(StateKind::Diagonal, Activation::Identity);
        let out = ssm_layer_forward(&layer, &variant, &[vec![1.0], vec![2.0]], &[0.0], 1).unwrap();
        assert_eq!(out.h, vec![vec![0.0], vec![1.0], vec![3.0]]);
        assert_eq!(out.y_tilde, vec![vec![1.0], vec![3.0]]);
    }

    #[test]
    fn zero_transition_is_memoryless() {
        let layer = const_layer(1, 1, StateKind::Scalar, 0.0, 1.5, 1.0);
        let variant = SsmVariant::new(StateKind::Scalar, Activation::Identity);
        let xs = vec![vec![1.0], vec![-2.0], vec![0.5]];
        let out = ssm_layer_forward(&layer, &variant, &xs, &[0.0], 1).unwrap();
        for (h, x) in out.h[1..].iter().zip(&xs) {
            assert_eq!(h[0], 1.5 * x[0]);
        }
    }

    #[test]
    fn layer_input_length_is_checked() {
        let layer = const_layer(1, 2, StateKind::Diagonal, 0.0, 0.0, 0.0);
        let variant = SsmVariant::new(StateKind::Diagonal, Activation::Identity);
        assert!(ssm_layer_forward(&layer, &variant, &[vec![1.0]], &[0.0], 1).is_err());
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
        let unit = normalize(&[1.0, -1.0, 1.0, -1.0]);
        for (a, b) in unit.iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        let v = normalize_with(&[3.0, 4.0], 0.0);
        assert!((v[0] - 0.848_528_137_423_857).abs() < 1e-15);
        assert!((v[1] - 1.131_370_849_898_476).abs() < 1e-15);
    }

    #[test]
    fn zero_model_cross_entropy() {
        let dims = ModelDims::new(2, 3, 2, 5, 4, 1).unwrap();
        let params = StackParams::zeros(dims, SsmVariant::default());
        let tokens: Vec<Vec<f64>> = (0..4).map(|t| vec![t as f64, 1.0]).collect();
        let loss = LossSpec::CrossEntropy(vec![0, 1, 2, 3]);
        let trace = stack_forward(&params, &tokens, &loss).unwrap();
        assert!(trace.logits.iter().flatten().all(|&o| o == 0.0));
        assert!((trace.loss - 4.0 * 5f64.ln()).abs() < 1e-12);
        assert!(trace.cotangent.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn single_layer_residual_base_is_raw_tokens() {
        let dims = ModelDims::new(1, 2, 2, 3, 3, 1).unwrap();
        let variant = SsmVariant::new(StateKind::Diagonal, Activation::Tanh);
        let params = StackParams::init(dims, variant, 11);
        let tokens: Vec<Vec<f64>> = (0..3).map(|t| vec![0.3 * t as f64 + 0.1, -0.7]).collect();
        let trace = stack_forward(&params, &tokens, &LossSpec::CrossEntropy(vec![0, 1, 2])).unwrap();
        let inputs: Vec<Vec<f64>> = tokens.iter().map(|x| normalize(x)).collect();
        let layer = ssm_layer_forward(&params.layers[0], &variant, &inputs, &[0.0; 2], 1).unwrap();
        for t in 0..3 {
            let expect: Vec<f64> = tokens[t].iter().zip(&layer.y_tilde[t]).map(|(a, b)| a + b).collect();
            assert_eq!(trace.y_final[t], expect);
        }
        assert_eq!(trace.y_hat[0], inputs);
    }

    #[test]
    fn omega_gradient_outer_product() {
        let dims = ModelDims::new(1, 1, 2, 3, 1, 1).unwrap();
        let trace = ForwardTrace {
            dims,
            variant: SsmVariant::default(),
            a: vec![],
            c: vec![],
            h: vec![],
            y_hat: vec![],
            y_final: vec![vec![1.0, 2.0]],
            logits: vec![vec![1.0, 0.0, 0.0]],
            cotangent: vec![],
            token_losses: vec![],
            loss: 0.0,
        };
        // mse with target o - e_1 * V/2 makes dl/do = e_1.
        let loss = LossSpec::Mse(vec![vec![1.0 - 1.5, 0.0, 0.0]]);
        let g = omega_gradient(&trace, &loss).unwrap();
        assert_eq!(g, vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);

        let perfect = LossSpec::Mse(vec![vec![1.0, 0.0, 0.0]]);
        assert!(omega_gradient(&trace, &perfect).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn heads_are_indexable_by_net() {
        let layer = const_layer(1, 1, StateKind::Diagonal, 1.0, 2.0, 3.0);
        assert_eq!(layer.head(Net::B).bias, vec![2.0]);
    }
}
