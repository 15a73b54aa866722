use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::linalg;

use super::dims::{Activation, ModelDims, Net, SsmVariant, StateKind};

/// A single affine head `φ(W x + b)` mapping a `P`-vector to `out` values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub out: usize,
    pub inp: usize,
    /// `out x inp`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(out: usize, inp: usize) -> Self {
        HeadParams {
            out,
            inp,
            weight: vec![0.0; out * inp],
            bias: vec![0.0; out],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `W x + b`.
    pub fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("head input", self.inp, x.len())?;
        let mut u = linalg::mat_vec(&self.weight, self.out, self.inp, x);
        linalg::add_assign(&mut u, &self.bias);
        Ok(u)
    }

    pub fn add_assign(&mut self, other: &HeadParams) {
        linalg::add_assign(&mut self.weight, &other.weight);
        linalg::add_assign(&mut self.bias, &other.bias);
    }

    pub fn scale(&mut self, s: f64) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.weight) && linalg::all_finite(&self.bias)
    }
}

/// The three heads of one SSM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub a: HeadParams,
    pub b: HeadParams,
    pub c: HeadParams,
}

impl LayerParams {
    pub fn zeros(dims: &ModelDims, variant: &SsmVariant) -> Self {
        LayerParams {
            a: HeadParams::zeros(variant.head_out(Net::A, dims), dims.p),
            b: HeadParams::zeros(variant.head_out(Net::B, dims), dims.p),
            c: HeadParams::zeros(variant.head_out(Net::C, dims), dims.p),
        }
    }

    pub fn head(&self, net: Net) -> &HeadParams {
        match net {
            Net::A => &self.a,
            Net::B => &self.b,
            Net::C => &self.c,
        }
    }

    pub fn head_mut(&mut self, net: Net) -> &mut HeadParams {
        match net {
            Net::A => &mut self.a,
            Net::B => &mut self.b,
            Net::C => &mut self.c,
        }
    }

    pub fn add_assign(&mut self, other: &LayerParams) {
        for net in Net::ALL {
            self.head_mut(net).add_assign(other.head(net));
        }
    }

    pub fn len(&self) -> usize {
        self.a.len() + self.b.len() + self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One named contiguous block of the flat parameter / gradient vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Flat layout: every `A` head (k = 1..K, weight then bias), then every `B`
/// head, then every `C` head, then `Ω`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamLayout {
    pub blocks: Vec<Block>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(dims: &ModelDims, variant: &SsmVariant) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            blocks.push(Block {
                name,
                offset,
                len: rows * cols,
                rows,
                cols,
            });
            offset += rows * cols;
        };
        for net in Net::ALL {
            let out = variant.head_out(net, dims);
            for k in 1..=dims.k {
                push(format!("{}{k}.weight", net.name()), out, dims.p);
                push(format!("{}{k}.bias", net.name()), out, 1);
            }
        }
        push("omega".to_string(), dims.v, dims.p);
        let total = blocks.iter().map(|b| b.len).sum();
        ParamLayout { blocks, total }
    }

    /// Index of the block holding flat coordinate `j`.
    pub fn block_of(&self, j: usize) -> Option<&Block> {
        self.blocks.iter().find(|b| j >= b.offset && j < b.offset + b.len)
    }
}

/// All trainable parameters: `K` layer triples plus the language head `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub dims: ModelDims,
    pub variant: SsmVariant,
    pub layers: Vec<LayerParams>,
    /// `V x P`, row-major.
    pub omega: Vec<f64>,
}

impl StackParams {
    pub fn zeros(dims: ModelDims, variant: SsmVariant) -> Self {
        StackParams {
            dims,
            variant,
            layers: (0..dims.k).map(|_| LayerParams::zeros(&dims, &variant)).collect(),
            omega: vec![0.0; dims.v * dims.p],
        }
    }

    /// Seeded initialisation. Weights are uniform in `±0.5/√P`; the `A`
    /// head's bias is centred so that the transition starts near `0.5 I`
    /// under the identity activation (and near `0` pre-sigmoid).
    pub fn init(dims: ModelDims, variant: SsmVariant, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = StackParams::zeros(dims, variant);
        let w = 0.5 / (dims.p as f64).sqrt();
        let a_centre = match variant.activation {
            Activation::Sigmoid => 0.0,
            Activation::Identity | Activation::Tanh => 0.5,
        };
        for layer in &mut params.layers {
            for net in Net::ALL {
                let head = layer.head_mut(net);
                head.weight.iter_mut().for_each(|x| *x = rng.random_range(-w..w));
                head.bias.iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
            }
            match variant.kind {
                StateKind::Unstructured => {
                    for i in 0..dims.n {
                        layer.a.bias[i * dims.n + i] += a_centre;
                    }
                }
                StateKind::Diagonal | StateKind::Scalar => {
                    layer.a.bias.iter_mut().for_each(|x| *x += a_centre);
                }
            }
        }
        let o = 1.0 / (dims.p as f64).sqrt();
        params.omega.iter_mut().for_each(|x| *x = rng.random_range(-o..o));
        params
    }

    /// Fills every coordinate of the flat layout with `f(j)`.
    pub fn from_fn(dims: ModelDims, variant: SsmVariant, f: impl Fn(usize) -> f64) -> Self {
        let layout = ParamLayout::new(&dims, &variant);
        let flat: Vec<f64> = (0..layout.total).map(f).collect();
        Self::from_flat(dims, variant, &flat).expect("layout length")
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.dims, &self.variant)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum::<usize>() + self.omega.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_blocks(&self.layers, &self.omega)
    }

    pub fn from_flat(dims: ModelDims, variant: SsmVariant, flat: &[f64]) -> Result<Self> {
        let mut params = StackParams::zeros(dims, variant);
        unflatten_into(&mut params.layers, &mut params.omega, flat)?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        check_len("layer count", self.dims.k, self.layers.len())?;
        check_len("omega", self.dims.v * self.dims.p, self.omega.len())?;
        for layer in &self.layers {
            for net in Net::ALL {
                let head = layer.head(net);
                check_len("head output", self.variant.head_out(net, &self.dims), head.out)?;
                check_len("head input", self.dims.p, head.inp)?;
                check_len("head weight", head.out * head.inp, head.weight.len())?;
                check_len("head bias", head.out, head.bias.len())?;
                if !head.is_finite() {
                    return Err(Error::Config(format!("non-finite {} head parameters", net.name())));
                }
            }
        }
        if !linalg::all_finite(&self.omega) {
            return Err(Error::Config("non-finite language head".into()));
        }
        Ok(())
    }
}

pub(crate) fn flatten_blocks(layers: &[LayerParams], omega: &[f64]) -> Vec<f64> {
    let mut flat = Vec::new();
    for net in Net::ALL {
        for layer in layers {
            let head = layer.head(net);
            flat.extend_from_slice(&head.weight);
            flat.extend_from_slice(&head.bias);
        }
    }
    flat.extend_from_slice(omega);
    flat
}

pub(crate) fn unflatten_into(layers: &mut [LayerParams], omega: &mut [f64], flat: &[f64]) -> Result<()> {
    let expected = layers.iter().map(LayerParams::len).sum::<usize>() + omega.len();
    check_len("flat parameter vector", expected, flat.len())?;
    let mut pos = 0;
    let mut take = |dst: &mut [f64]| {
        dst.copy_from_slice(&flat[pos..pos + dst.len()]);
        pos += dst.len();
    };
    for net in Net::ALL {
        for layer in layers.iter_mut() {
            let head = layer.head_mut(net);
            take(&mut head.weight);
            take(&mut head.bias);
        }
    }
    take(omega);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims::new(2, 3, 2, 5, 4, 1).unwrap()
    }

    #[test]
    fn layout_matches_flatten_order() {
        let variant = SsmVariant::new(StateKind::Unstructured, Activation::Tanh);
        let p = StackParams::from_fn(dims(), variant, |j| j as f64);
        let layout = p.layout();
        assert_eq!(layout.total, p.num_params());
        assert_eq!(layout.blocks[0].name, "A1.weight");
        assert_eq!(layout.blocks[2].name, "A2.weight");
        assert_eq!(layout.blocks[4].name, "B1.weight");
        assert_eq!(layout.blocks.last().unwrap().name, "omega");
        // A2.weight is 9x2 and starts after A1 (18 + 9 values).
        assert_eq!(layout.blocks[2].offset, 27);
        assert_eq!(p.layers[1].a.weight[0], 27.0);
        assert_eq!(p.flatten(), (0..layout.total).map(|j| j as f64).collect::<Vec<_>>());
    }

    #[test]
    fn seeded_init_is_reproducible_and_valid() {
        let v = SsmVariant::default();
        let a = StackParams::init(dims(), v, 3);
        let b = StackParams::init(dims(), v, 3);
        assert_eq!(a, b);
        assert_ne!(a, StackParams::init(dims(), v, 4));
        a.validate().unwrap();
    }

    #[test]
    fn from_flat_rejects_wrong_length() {
        let v = SsmVariant::default();
        assert!(StackParams::from_flat(dims(), v, &[0.0; 3]).is_err());
    }
}
