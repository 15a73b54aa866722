use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of a stacked SSM model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of stacked layers.
    pub k: usize,
    /// Hidden-state dimension.
    pub n: usize,
    /// Token / residual-stream dimension.
    pub p: usize,
    /// Vocabulary size.
    pub v: usize,
    /// Sequence length.
    pub t: usize,
    /// Batch size. Only the cost model and the trainer read it.
    pub bs: usize,
}

impl ModelDims {
    pub fn new(k: usize, n: usize, p: usize, v: usize, t: usize, bs: usize) -> Result<Self> {
        let dims = ModelDims { k, n, p, v, t, bs };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, val) in [
            ("K", self.k),
            ("N", self.n),
            ("P", self.p),
            ("T", self.t),
            ("bs", self.bs),
        ] {
            if val == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.v < 2 {
            return Err(Error::Config(format!("V must be at least 2, got {}", self.v)));
        }
        Ok(())
    }

    pub fn with_t(mut self, t: usize) -> Self {
        self.t = t;
        self
    }
}

/// Structure of the per-token transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    /// Full `N x N` transition.
    Unstructured,
    /// `N` entries on the diagonal.
    Diagonal,
    /// One scalar times the identity.
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Activation::Identity => u,
            Activation::Sigmoid => 1.0 / (1.0 + (-u).exp()),
            Activation::Tanh => u.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `s = φ(u)`.
    pub fn derivative_from_output(self, s: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => s * (1.0 - s),
            Activation::Tanh => 1.0 - s * s,
        }
    }
}

/// Which of the three per-layer networks a parameter block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Net {
    A,
    B,
    C,
}

impl Net {
    pub const ALL: [Net; 3] = [Net::A, Net::B, Net::C];

    pub fn name(self) -> &'static str {
        match self {
            Net::A => "A",
            Net::B => "B",
            Net::C => "C",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SsmVariant {
    pub kind: StateKind,
    pub activation: Activation,
}

impl Default for SsmVariant {
    fn default() -> Self {
        SsmVariant {
            kind: StateKind::Diagonal,
            activation: Activation::Identity,
        }
    }
}

impl SsmVariant {
    pub fn new(kind: StateKind, activation: Activation) -> Self {
        SsmVariant { kind, activation }
    }

    /// Number of scalars one transition `A^t` occupies.
    pub fn transition_len(&self, n: usize) -> usize {
        match self.kind {
            StateKind::Unstructured => n * n,
            StateKind::Diagonal => n,
            StateKind::Scalar => 1,
        }
    }

    /// Output size of the head producing `net`'s matrix. `B` is `N x P`
    /// and `C` is `P x N`, both flattened row-major.
    pub fn head_out(&self, net: Net, dims: &ModelDims) -> usize {
        match net {
            Net::A => self.transition_len(dims.n),
            Net::B | Net::C => dims.n * dims.p,
        }
    }
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, { $($s:literal => $v:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }
    };
}

str_enum!(StateKind, "ssm variant", {
    "unstructured" => StateKind::Unstructured,
    "diagonal" => StateKind::Diagonal,
    "scalar" => StateKind::Scalar,
});

str_enum!(Activation, "head activation", {
    "identity" => Activation::Identity,
    "sigmoid" => Activation::Sigmoid,
    "tanh" => Activation::Tanh,
});

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKind::Unstructured => "unstructured",
            StateKind::Diagonal => "diagonal",
            StateKind::Scalar => "scalar",
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_reject_zero_and_tiny_vocab() {
        assert!(ModelDims::new(1, 1, 1, 2, 1, 1).is_ok());
        assert!(ModelDims::new(0, 1, 1, 2, 1, 1).is_err());
        assert!(ModelDims::new(1, 1, 1, 1, 1, 1).is_err());
        assert!(ModelDims::new(1, 1, 1, 2, 1, 0).is_err());
    }

    #[test]
    fn head_sizes_follow_variant() {
        let d = ModelDims::new(2, 3, 2, 5, 4, 1).unwrap();
        let u = SsmVariant::new(StateKind::Unstructured, Activation::Identity);
        let g = SsmVariant::new(StateKind::Diagonal, Activation::Identity);
        let s = SsmVariant::new(StateKind::Scalar, Activation::Identity);
        assert_eq!(u.head_out(Net::A, &d), 9);
        assert_eq!(g.head_out(Net::A, &d), 3);
        assert_eq!(s.head_out(Net::A, &d), 1);
        assert_eq!(s.head_out(Net::B, &d), 6);
        assert_eq!(s.head_out(Net::C, &d), 6);
    }

    #[test]
    fn parse_names() {
        assert_eq!("Diagonal".parse::<StateKind>().unwrap(), StateKind::Diagonal);
        assert_eq!("tanh".parse::<Activation>().unwrap(), Activation::Tanh);
        assert!("relu".parse::<Activation>().is_err());
    }
}
