//! Contiguous layer blocks per device and the tensors each device keeps.

use std::ops::RangeInclusive;

use crate::error::{Error, Result};

/// Tensor family named in the placement table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tensor {
    State,
    Readout,
    LayerInput,
    Transition,
    Params,
    Gradient,
    Cotangent,
}

impl Tensor {
    pub const ALL: [Tensor; 7] = [
        Tensor::Cotangent,
        Tensor::State,
        Tensor::Readout,
        Tensor::LayerInput,
        Tensor::Transition,
        Tensor::Params,
        Tensor::Gradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::State => "h",
            Tensor::Readout => "C",
            Tensor::LayerInput => "y_hat",
            Tensor::Transition => "A",
            Tensor::Params => "theta",
            Tensor::Gradient => "gradient",
            Tensor::Cotangent => "dl/dy_K",
        }
    }
}

/// Index ranges of one tensor family on one device. `times` is `None`
/// for per-layer tensors without a token index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub tensor: Tensor,
    pub layers: Option<RangeInclusive<usize>>,
    pub times: Option<RangeInclusive<usize>>,
}

impl Placement {
    pub fn contains(&self, k: usize, t: usize) -> bool {
        self.layers.as_ref().is_none_or(|r| r.contains(&k)) && self.times.as_ref().is_none_or(|r| r.contains(&t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DevicePlan {
    /// 1-based device index.
    pub device: usize,
    pub layers: RangeInclusive<usize>,
    /// The last device also holds the language head and the loss.
    pub holds_head: bool,
}

impl DevicePlan {
    /// Placement rows for a sequence of length `t`.
    pub fn placement(&self, t: usize) -> Vec<Placement> {
        let (lo, hi) = (*self.layers.start(), *self.layers.end());
        Tensor::ALL
            .into_iter()
            .map(|tensor| {
                let (layers, times) = match tensor {
                    Tensor::Cotangent => (None, Some(1..=t)),
                    Tensor::State | Tensor::Readout => (Some(lo..=hi), Some(1..=t)),
                    Tensor::LayerInput => (Some(lo - 1..=hi - 1), Some(1..=t)),
                    Tensor::Transition => (Some(lo..=hi), Some(2..=t)),
                    Tensor::Params | Tensor::Gradient => (Some(lo..=hi), None),
                };
                Placement { tensor, layers, times }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardPlan {
    pub k: usize,
    pub upsilon: usize,
    pub devices: Vec<DevicePlan>,
}

impl ShardPlan {
    pub fn layers_per_device(&self) -> usize {
        self.k / self.upsilon
    }

    /// Device hosting layer `k`.
    pub fn device_of(&self, k: usize) -> Option<usize> {
        self.devices.iter().find(|d| d.layers.contains(&k)).map(|d| d.device)
    }
}

/// Device `υ` hosts layers `(υ−1)(K/Υ)+1 ..= υ(K/Υ)`. `Υ` must divide `K`.
pub fn plan_shards(k: usize, upsilon: usize) -> Result<ShardPlan> {
    if k == 0 || upsilon == 0 {
        return Err(Error::Config(format!("need K >= 1 and upsilon >= 1, got K={k} upsilon={upsilon}")));
    }
    if !k.is_multiple_of(upsilon) {
        return Err(Error::Config(format!("upsilon={upsilon} does not divide K={k}")));
    }
    let per = k / upsilon;
    let devices = (1..=upsilon)
        .map(|u| DevicePlan {
            device: u,
            layers: (u - 1) * per + 1..=u * per,
            holds_head: u == upsilon,
        })
        .collect();
    Ok(ShardPlan { k, upsilon, devices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contiguous_blocks() {
        let plan = plan_shards(4, 2).unwrap();
        assert_eq!(plan.devices[0].layers, 1..=2);
        assert_eq!(plan.devices[1].layers, 3..=4);
        assert_eq!(plan.device_of(3), Some(2));
        let single = plan_shards(3, 1).unwrap();
        assert_eq!(single.devices.len(), 1);
        assert_eq!(single.devices[0].layers, 1..=3);
    }

    #[test]
    fn divisibility_is_enforced() {
        let err = plan_shards(4, 3).unwrap_err().to_string();
        assert!(err.contains("upsilon=3") && err.contains("K=4"), "{err}");
    }

    #[test]
    fn placement_rows() {
        let plan = plan_shards(6, 3).unwrap();
        let rows = plan.devices[1].placement(5);
        let get = |t: Tensor| rows.iter().find(|p| p.tensor == t).unwrap();
        assert_eq!(get(Tensor::State).layers, Some(3..=4));
        assert_eq!(get(Tensor::LayerInput).layers, Some(2..=3));
        assert_eq!(get(Tensor::Transition).times, Some(2..=5));
        assert!(get(Tensor::Cotangent).contains(99, 5));
        assert!(!get(Tensor::Transition).contains(3, 1));
    }
}
