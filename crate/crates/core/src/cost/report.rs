use std::fmt;

use crate::error::Result;
use crate::ssm::{ModelDims, Net, SsmVariant};

use super::counts::{trace_storage_count, vjp_count, TraceStorage, VjpCountSummary};
use super::table::{head_sizes, per_vjp_cost, PerVjp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTotals {
    /// All VJPs over every layer and network.
    pub full_vjps: u64,
    pub truncated_vjps: u64,
    pub full_flops: u64,
    pub truncated_flops: u64,
}

/// Memory and FLOP accounting for one model and window.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub dims: ModelDims,
    pub variant: SsmVariant,
    pub vjp_counts: VjpCountSummary,
    pub trace_storage: TraceStorage,
    /// `3N(P+1)`: three heads of `PN+N` numbers.
    pub param_storage: u64,
    pub per_vjp: PerVjp,
    pub totals: CostTotals,
}

pub fn cost_report(dims: &ModelDims, variant: &SsmVariant, tbar: usize) -> Result<CostReport> {
    dims.validate()?;
    let vjp_counts = vjp_count(dims.t, tbar)?;
    let trace_storage = trace_storage_count(dims.t, dims.k, dims.n, dims.p);
    let (n, p) = (dims.n as u64, dims.p as u64);
    let per_vjp = per_vjp_cost(variant.kind, dims.n, dims.p, dims.bs, head_sizes(variant.kind, dims.n, dims.p));
    let k = dims.k as u64;
    let ab_flops = per_vjp.a.flops + per_vjp.b.flops;
    let totals = CostTotals {
        full_vjps: k * (2 * vjp_counts.full_per_ab + vjp_counts.full_c),
        truncated_vjps: k * (2 * vjp_counts.truncated_per_ab + vjp_counts.truncated_c),
        full_flops: k * (vjp_counts.full_per_ab * ab_flops + vjp_counts.full_c * per_vjp.c.flops),
        truncated_flops: k * (vjp_counts.truncated_per_ab * ab_flops + vjp_counts.truncated_c * per_vjp.c.flops),
    };
    Ok(CostReport {
        dims: *dims,
        variant: *variant,
        vjp_counts,
        trace_storage,
        param_storage: 3 * n * (p + 1),
        per_vjp,
        totals,
    })
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.dims;
        let c = &self.vjp_counts;
        writeln!(
            f,
            "model: K={} N={} P={} V={} T={} bs={} variant={} activation={}",
            d.k, d.n, d.p, d.v, d.t, d.bs, self.variant.kind, self.variant.activation
        )?;
        if c.clamped {
            writeln!(f, "warning: Tbar exceeds T, clamped to {}", c.tbar)?;
        }
        writeln!(f, "vjps per A/B network, full:          {}", group(c.full_per_ab))?;
        writeln!(f, "vjps per A/B network, Tbar={:<8} {}", format!("{}:", c.tbar), group(c.truncated_per_ab))?;
        writeln!(f, "  closed form T̄T + T̄(T̄-1)/2:        {}", group(c.printed_truncated_per_ab))?;
        writeln!(f, "vjps per C network:                  {}", group(c.full_c))?;
        writeln!(
            f,
            "reduction: {:.1}% (closed form: {:.1}%)",
            100.0 * c.reduction(),
            100.0 * c.printed_reduction()
        )?;
        writeln!(f, "trace numbers:                       {}", group(self.trace_storage.trace_only))?;
        writeln!(f, "trace + parameter numbers:           {}", group(self.trace_storage.with_params))?;
        writeln!(f, "{:<4} {:>14} {:>14} {:>14}", "net", "memory", "bytes_fp16", "flops")?;
        for net in Net::ALL {
            let v = self.per_vjp.get(net);
            writeln!(f, "{:<4} {:>14} {:>14} {:>14}", net.name(), v.memory_numbers, v.memory_bytes_fp16, v.flops)?;
        }
        writeln!(f, "total vjps: full {} truncated {}", group(self.totals.full_vjps), group(self.totals.truncated_vjps))?;
        write!(f, "total flops: full {} truncated {}", group(self.totals.full_flops), group(self.totals.truncated_flops))
    }
}

/// `21999000` as `21,999,000`.
pub fn group(x: u64) -> String {
    let s = x.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{Activation, StateKind};

    #[test]
    fn grouping() {
        assert_eq!(group(21_999_000), "21,999,000");
        assert_eq!(group(999), "999");
        assert_eq!(group(0), "0");
    }

    #[test]
    fn totals_are_sums_of_parts() {
        let dims = ModelDims::new(3, 4, 2, 5, 12, 2).unwrap();
        let r = cost_report(&dims, &SsmVariant::new(StateKind::Diagonal, Activation::Identity), 5).unwrap();
        let c = r.vjp_counts;
        assert_eq!(r.totals.truncated_vjps, 3 * (2 * c.truncated_per_ab + c.truncated_c));
        let by_net = c.truncated_per_ab * (r.per_vjp.a.flops + r.per_vjp.b.flops) + c.truncated_c * r.per_vjp.c.flops;
        assert_eq!(r.totals.truncated_flops, 3 * by_net);
        assert!(r.to_string().contains("closed form"));
    }
}
