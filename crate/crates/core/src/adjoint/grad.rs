//! Gradients in the flat concatenation layout of [`ParamLayout`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::ssm::params::{flatten_blocks, unflatten_into};
use crate::ssm::{HeadParams, LayerParams, ModelDims, Net, ParamLayout, SsmVariant, StackParams};

/// Gradient with one block per head and one for `Ω`, shaped like the
/// parameters. Flattening follows the same order as [`StackParams::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub dims: ModelDims,
    pub variant: SsmVariant,
    pub layers: Vec<LayerParams>,
    pub omega: Vec<f64>,
}

impl GradVector {
    pub fn zeros(dims: ModelDims, variant: SsmVariant) -> Self {
        let p = StackParams::zeros(dims, variant);
        GradVector {
            dims,
            variant,
            layers: p.layers,
            omega: p.omega,
        }
    }

    pub fn zeros_like(params: &StackParams) -> Self {
        Self::zeros(params.dims, params.variant)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.dims, &self.variant)
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum::<usize>() + self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block for network `net` of layer `k` (1-based).
    pub fn head(&self, net: Net, k: usize) -> &HeadParams {
        self.layers[k - 1].head(net)
    }

    pub fn head_mut(&mut self, net: Net, k: usize) -> &mut HeadParams {
        self.layers[k - 1].head_mut(net)
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_blocks(&self.layers, &self.omega)
    }

    pub fn from_flat(dims: ModelDims, variant: SsmVariant, flat: &[f64]) -> Result<Self> {
        let mut g = Self::zeros(dims, variant);
        unflatten_into(&mut g.layers, &mut g.omega, flat)?;
        Ok(g)
    }

    /// Blockwise sum.
    pub fn add_assign(&mut self, other: &GradVector) -> Result<()> {
        check_len("gradient length", self.len(), other.len())?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
        linalg::add_assign(&mut self.omega, &other.omega);
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for layer in &mut self.layers {
            for net in Net::ALL {
                layer.head_mut(net).scale(s);
            }
        }
        self.omega.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(&self.flatten())
    }

    /// Same shapes, same bits.
    pub fn bitwise_eq(&self, other: &GradVector) -> bool {
        let (a, b) = (self.flatten(), other.flatten());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    /// Writes `<stem>.bin` (little-endian `f64`, flat order) and
    /// `<stem>.json` (block name to offset, length and shape).
    /// Returns both paths.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let bin = dir.join(format!("{stem}.bin"));
        let json = dir.join(format!("{stem}.json"));
        let mut bytes = Vec::with_capacity(self.len() * 8);
        for x in self.flatten() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(&bin, bytes)?;
        let mut f = fs::File::create(&json)?;
        serde_json::to_writer_pretty(&mut f, &self.layout())?;
        f.write_all(b"\n")?;
        Ok((bin, json))
    }

    /// Reads the binary half of [`GradVector::export`].
    pub fn import(path: &Path, dims: ModelDims, variant: SsmVariant) -> Result<Self> {
        let bytes = fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Index(format!("{} is not a whole number of f64 values", path.display())));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_flat(dims, variant, &flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{Activation, StateKind};

    fn setup() -> (ModelDims, SsmVariant) {
        (
            ModelDims::new(2, 3, 2, 4, 3, 1).unwrap(),
            SsmVariant::new(StateKind::Unstructured, Activation::Tanh),
        )
    }

    #[test]
    fn length_matches_parameter_count() {
        let (dims, variant) = setup();
        let g = GradVector::zeros(dims, variant);
        assert_eq!(g.len(), StackParams::zeros(dims, variant).num_params());
        assert_eq!(g.len(), g.layout().total);
    }

    #[test]
    fn addition_is_blockwise() {
        let (dims, variant) = setup();
        let n = GradVector::zeros(dims, variant).len();
        let a: Vec<f64> = (0..n).map(|j| j as f64).collect();
        let b: Vec<f64> = (0..n).map(|j| 0.5 * j as f64 - 1.0).collect();
        let mut ga = GradVector::from_flat(dims, variant, &a).unwrap();
        ga.add_assign(&GradVector::from_flat(dims, variant, &b).unwrap()).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(ga.flatten(), sum);
    }

    #[test]
    fn export_round_trips() {
        let (dims, variant) = setup();
        let n = GradVector::zeros(dims, variant).len();
        let g = GradVector::from_flat(dims, variant, &(0..n).map(|j| (j as f64).sin()).collect::<Vec<_>>()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (bin, json) = g.export(dir.path(), "grad").unwrap();
        assert!(GradVector::import(&bin, dims, variant).unwrap().bitwise_eq(&g));
        let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(sidecar["blocks"][0]["name"], "A1.weight");
        assert_eq!(sidecar["total"], n);
    }
}
