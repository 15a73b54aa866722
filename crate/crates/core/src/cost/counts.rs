//! VJP counts and trace storage counts.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VjpCountSummary {
    pub t: usize,
    /// Window length after clamping to `t`.
    pub tbar: usize,
    /// The requested window exceeded `t` and was clamped.
    pub clamped: bool,
    pub full_per_ab: u64,
    pub full_c: u64,
    /// Σ_t min(t, T̄): the number of `A` (or `B`) VJPs the windowed sum issues.
    pub truncated_per_ab: u64,
    pub truncated_c: u64,
    /// `T̄T + T̄(T̄−1)/2`, kept for comparison with the published closed form.
    pub printed_truncated_per_ab: u64,
}

impl VjpCountSummary {
    /// Fraction of `A`/`B` VJPs removed by truncation.
    pub fn reduction(&self) -> f64 {
        reduction(self.full_per_ab, self.truncated_per_ab)
    }

    pub fn printed_reduction(&self) -> f64 {
        reduction(self.full_per_ab, self.printed_truncated_per_ab)
    }
}

pub fn reduction(full: u64, truncated: u64) -> f64 {
    1.0 - truncated as f64 / full as f64
}

/// `(1+T)T/2` per `A`/`B` network and `T` for `C`, untruncated and with a
/// window of `tbar`. A window longer than `t` is clamped and flagged.
pub fn vjp_count(t: usize, tbar: usize) -> Result<VjpCountSummary> {
    if t == 0 || tbar == 0 {
        return Err(Error::Config(format!("vjp count needs T >= 1 and Tbar >= 1, got T={t} Tbar={tbar}")));
    }
    let clamped = tbar > t;
    let (t64, w) = (t as u64, tbar.min(t) as u64);
    Ok(VjpCountSummary {
        t,
        tbar: w as usize,
        clamped,
        full_per_ab: (1 + t64) * t64 / 2,
        full_c: t64,
        truncated_per_ab: w * t64 - w * (w - 1) / 2,
        truncated_c: t64,
        printed_truncated_per_ab: w * t64 + w * (w - 1) / 2,
    })
}

/// Stored numbers before the VJP phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceStorage {
    /// `TK(2N+P) + TP`: transitions, states and layer inputs for every
    /// `(t, k)`, plus one cotangent per token.
    pub trace_only: u64,
    /// `T(2NK+PK+P) + 3N(P+1)`: the above plus three heads of `PN+N`.
    pub with_params: u64,
}

pub fn trace_storage_count(t: usize, k: usize, n: usize, p: usize) -> TraceStorage {
    let (t, k, n, p) = (t as u64, k as u64, n as u64, p as u64);
    TraceStorage {
        trace_only: t * k * (2 * n + p) + t * p,
        with_params: t * (2 * n * k + p * k + p) + 3 * n * (p + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        let c = vjp_count(4, 4).unwrap();
        assert_eq!((c.full_per_ab, c.truncated_per_ab, c.full_c), (10, 10, 4));
        let c = vjp_count(4, 2).unwrap();
        assert_eq!(c.truncated_per_ab, 7);
        assert_eq!(c.printed_truncated_per_ab, 9);
    }

    #[test]
    fn long_context_counts() {
        let c = vjp_count(10_000, 2_000).unwrap();
        assert_eq!(c.full_per_ab, 50_005_000);
        assert_eq!(c.truncated_per_ab, 18_001_000);
        assert_eq!(c.printed_truncated_per_ab, 21_999_000);
        assert!((c.reduction() - 0.640_015_998_400_16).abs() < 1e-12);
        assert!((c.printed_reduction() - 0.560_063_993_600_64).abs() < 1e-12);
    }

    #[test]
    fn window_is_clamped() {
        let c = vjp_count(5, 9).unwrap();
        assert!(c.clamped);
        assert_eq!(c.tbar, 5);
        assert_eq!(c.truncated_per_ab, c.full_per_ab);
        assert!(vjp_count(5, 0).is_err());
    }

    #[test]
    fn truncated_count_is_affine_in_t() {
        for w in 1..6u64 {
            let at = |t: usize| vjp_count(t, w as usize).unwrap().truncated_per_ab as i64;
            let slope = at(20) - at(19);
            for t in (w as usize)..40 {
                assert_eq!(at(t + 1) - at(t), slope);
            }
        }
    }

    #[test]
    fn storage_examples() {
        assert_eq!(trace_storage_count(4, 2, 3, 2).with_params, 99);
        assert_eq!(trace_storage_count(4, 2, 3, 2).trace_only, 72);
        assert_eq!(trace_storage_count(1, 1, 1, 1).trace_only, 4);
        assert_eq!(trace_storage_count(8, 3, 5, 2).trace_only * 2, trace_storage_count(16, 3, 5, 2).trace_only);
    }
}
