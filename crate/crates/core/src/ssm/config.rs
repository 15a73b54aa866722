//! `key = value` model configuration files. Blank lines and `#` comments are
//! ignored; keys are case-sensitive.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::dims::{Activation, ModelDims, SsmVariant, StateKind};

/// Parsed `key = value` pairs, in file order of last occurrence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            map.insert(key.trim().to_string(), value.trim().trim_matches('"').to_string());
        }
        Ok(KeyValues(map))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("cannot parse `{key}` value '{raw}'"))),
        }
    }
}

/// Initial hidden state of every layer. Only the zero state is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum H0Policy {
    #[default]
    Zero,
}

impl std::str::FromStr for H0Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" | "0" => Ok(H0Policy::Zero),
            other => Err(Error::Config(format!("unsupported h0 policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dims: ModelDims,
    pub variant: SsmVariant,
    pub seed: u64,
    pub h0: H0Policy,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dims: ModelDims { k: 2, n: 4, p: 8, v: 8, t: 16, bs: 4 },
            variant: SsmVariant::new(StateKind::Diagonal, Activation::Sigmoid),
            seed: 7,
            h0: H0Policy::Zero,
        }
    }
}

impl ModelConfig {
    /// Overlays any model keys present in `kv` on top of `self`.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parsed($key)? {
                    $field = v;
                }
            };
        }
        set!("K", self.dims.k);
        set!("N", self.dims.n);
        set!("P", self.dims.p);
        set!("V", self.dims.v);
        set!("T", self.dims.t);
        set!("bs", self.dims.bs);
        set!("seed", self.seed);
        if let Some(v) = kv.get("variant") {
            self.variant.kind = v.parse()?;
        }
        if let Some(v) = kv.get("head_activation") {
            self.variant.activation = v.parse()?;
        }
        if let Some(v) = kv.get("h0") {
            self.h0 = v.parse()?;
        }
        self.dims.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_model_file() {
        let text = "# model\nK = 3\nN=5\n P = 2 \nV = 11\nT = 9\nbs = 2\nvariant = unstructured\nhead_activation = \"tanh\"\nseed = 42\nh0 = zero\n";
        let cfg = ModelConfig::default().apply(&KeyValues::parse(text).unwrap()).unwrap();
        assert_eq!(cfg.dims, ModelDims { k: 3, n: 5, p: 2, v: 11, t: 9, bs: 2 });
        assert_eq!(cfg.variant, SsmVariant::new(StateKind::Unstructured, Activation::Tanh));
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn rejects_bad_lines_and_values() {
        assert!(KeyValues::parse("K 3").is_err());
        let kv = KeyValues::parse("K = three").unwrap();
        assert!(ModelConfig::default().apply(&kv).is_err());
        let kv = KeyValues::parse("V = 1").unwrap();
        assert!(ModelConfig::default().apply(&kv).is_err());
        let kv = KeyValues::parse("h0 = random").unwrap();
        assert!(ModelConfig::default().apply(&kv).is_err());
    }
}
