//! Per-VJP memory and FLOPs of the three head networks.

use crate::ssm::{Net, StateKind};

/// FP16 byte width.
pub const FP16_BYTES: u64 = 2;

/// Parameter counts of one head: `theta` is every parameter, `theta_star`
/// the largest single parameter tensor (the weight matrix).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSizes {
    pub theta: u64,
    pub theta_star: u64,
}

impl HeadSizes {
    /// Affine head with `out` outputs and a `P`-vector input.
    pub fn affine(out: usize, p: usize) -> Self {
        let w = (out * p) as u64;
        HeadSizes {
            theta: w + out as u64,
            theta_star: w,
        }
    }
}

/// Head sizes for the `A`, `B` and `C` networks.
pub fn head_sizes(kind: StateKind, n: usize, p: usize) -> [HeadSizes; 3] {
    let out_a = match kind {
        StateKind::Unstructured => n * n,
        StateKind::Diagonal => n,
        StateKind::Scalar => 1,
    };
    [HeadSizes::affine(out_a, p), HeadSizes::affine(n * p, p), HeadSizes::affine(p * n, p)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VjpCost {
    pub memory_numbers: u64,
    pub memory_bytes_fp16: u64,
    pub flops: u64,
}

impl VjpCost {
    fn new(memory_numbers: u64, flops: u64) -> Self {
        VjpCost {
            memory_numbers,
            memory_bytes_fp16: memory_numbers * FP16_BYTES,
            flops,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerVjp {
    pub a: VjpCost,
    pub b: VjpCost,
    pub c: VjpCost,
}

impl PerVjp {
    pub fn get(&self, net: Net) -> VjpCost {
        match net {
            Net::A => self.a,
            Net::B => self.b,
            Net::C => self.c,
        }
    }
}

/// Memory is `bs(out + |θ|*) + |θ|` and FLOPs `bs · out(2P+1)`, where `out`
/// is `N²`/`N`/`1` for `A` and `NP` (unstructured) or `N` otherwise for
/// `B` and `C`.
pub fn per_vjp_cost(kind: StateKind, n: usize, p: usize, bs: usize, sizes: [HeadSizes; 3]) -> PerVjp {
    let (n, p, bs) = (n as u64, p as u64, bs as u64);
    let span = 2 * p + 1;
    let (out_a, out_bc) = match kind {
        StateKind::Unstructured => (n * n, n * p),
        StateKind::Diagonal => (n, n),
        StateKind::Scalar => (1, n),
    };
    let cost = |out: u64, s: HeadSizes| VjpCost::new(bs * (out + s.theta_star) + s.theta, bs * out * span);
    PerVjp {
        a: cost(out_a, sizes[0]),
        b: cost(out_bc, sizes[1]),
        c: cost(out_bc, sizes[2]),
    }
}

/// Average FLOPs of one VJP including its share of adjoint-state work,
/// `bs(7NP + 3N)`.
pub fn averaged_vjp_flops(n: usize, p: usize, bs: usize) -> u64 {
    let (n, p, bs) = (n as u64, p as u64, bs as u64);
    bs * (7 * n * p + 3 * n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kind: StateKind, n: usize, p: usize, bs: usize) -> [(u64, u64); 3] {
        let c = per_vjp_cost(kind, n, p, bs, head_sizes(kind, n, p));
        [Net::A, Net::B, Net::C].map(|net| (c.get(net).memory_numbers, c.get(net).flops))
    }

    #[test]
    fn diagonal_a_example() {
        let c = per_vjp_cost(StateKind::Diagonal, 3, 2, 2, head_sizes(StateKind::Diagonal, 3, 2));
        assert_eq!((c.a.memory_numbers, c.a.memory_bytes_fp16, c.a.flops), (27, 54, 30));
        assert_eq!(row(StateKind::Scalar, 4, 2, 1)[0].1, 5);
    }

    #[test]
    fn zero_batch_leaves_parameters() {
        let sizes = head_sizes(StateKind::Unstructured, 3, 2);
        let c = per_vjp_cost(StateKind::Unstructured, 3, 2, 0, sizes);
        assert_eq!((c.a.memory_numbers, c.a.flops), (sizes[0].theta, 0));
    }

    #[test]
    fn diagonal_never_exceeds_unstructured() {
        for n in 1..7 {
            for p in 1..6 {
                for bs in 0..4 {
                    let u = row(StateKind::Unstructured, n, p, bs);
                    let d = row(StateKind::Diagonal, n, p, bs);
                    for (x, y) in d.iter().zip(&u) {
                        assert!(x.0 <= y.0 && x.1 <= y.1);
                    }
                }
            }
        }
    }

    #[test]
    fn averaged_flops_at_reference_dims() {
        assert_eq!(averaged_vjp_flops(225, 128, 8), 1_618_200);
    }
}
