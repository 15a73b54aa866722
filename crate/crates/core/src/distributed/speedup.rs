//! Modelled wall-clock time of the gradient phase.

use crate::cost::CostReport;
use crate::ssm::StateKind;

use super::plan::ShardPlan;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupEstimate {
    /// Devices times instances per device.
    pub parallelism: usize,
    pub gradient_phase_seconds: f64,
    /// The same VJPs on a single instance.
    pub serial_gradient_seconds: f64,
    /// One sequence through the pipeline; stages run one after another.
    pub forward_phase_seconds: f64,
}

impl SpeedupEstimate {
    pub fn speedup(&self) -> f64 {
        self.serial_gradient_seconds / self.gradient_phase_seconds
    }
}

/// Forward FLOPs of one layer for one token: three affine heads, the
/// transition, the input map and the readout.
pub fn forward_flops_per_token_layer(kind: StateKind, n: usize, p: usize) -> u64 {
    let (n, p) = (n as u64, p as u64);
    let (out_a, transition) = match kind {
        StateKind::Unstructured => (n * n, 2 * n * n),
        StateKind::Diagonal => (n, n),
        StateKind::Scalar => (1, n),
    };
    let heads = (out_a + 2 * n * p) * (2 * p + 1);
    heads + transition + 2 * n * p + 2 * n * p + p
}

/// Gradient-phase time is the truncated VJP FLOPs spread evenly over
/// `Υ × instances` instances of `instance_flops_per_sec` each.
pub fn simulate_speedup(
    plan: &ShardPlan,
    report: &CostReport,
    instances_per_device: usize,
    instance_flops_per_sec: f64,
) -> SpeedupEstimate {
    let parallelism = plan.upsilon * instances_per_device;
    let flops = report.totals.truncated_flops as f64;
    let d = &report.dims;
    let forward = (d.t * d.k) as f64 * forward_flops_per_token_layer(report.variant.kind, d.n, d.p) as f64;
    SpeedupEstimate {
        parallelism,
        gradient_phase_seconds: flops / (parallelism as f64 * instance_flops_per_sec),
        serial_gradient_seconds: flops / instance_flops_per_sec,
        forward_phase_seconds: forward / instance_flops_per_sec,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupRow {
    pub upsilon: usize,
    pub parallelism: usize,
    pub gradient_phase_seconds: f64,
}

/// Gradient-phase time against device count.
pub fn speedup_curve(
    report: &CostReport,
    instances_per_device: usize,
    instance_flops_per_sec: f64,
    upsilons: &[usize],
) -> Vec<SpeedupRow> {
    upsilons
        .iter()
        .map(|&u| {
            let parallelism = u * instances_per_device;
            SpeedupRow {
                upsilon: u,
                parallelism,
                gradient_phase_seconds: report.totals.truncated_flops as f64
                    / (parallelism as f64 * instance_flops_per_sec),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::cost_report;
    use crate::distributed::plan_shards;
    use crate::ssm::{ModelDims, SsmVariant};

    fn report() -> CostReport {
        let dims = ModelDims::new(8, 4, 4, 8, 64, 2).unwrap();
        cost_report(&dims, &SsmVariant::default(), 16).unwrap()
    }

    #[test]
    fn parallelism_factor() {
        let r = report();
        assert_eq!(simulate_speedup(&plan_shards(8, 8).unwrap(), &r, 7, 1e12).parallelism, 56);
        let one = simulate_speedup(&plan_shards(8, 1).unwrap(), &r, 1, 1e12);
        assert_eq!(one.parallelism, 1);
        assert_eq!(one.speedup(), 1.0);
    }

    #[test]
    fn doubling_devices_halves_gradient_time() {
        let r = report();
        let a = simulate_speedup(&plan_shards(8, 2).unwrap(), &r, 3, 1e12);
        let b = simulate_speedup(&plan_shards(8, 4).unwrap(), &r, 3, 1e12);
        assert_eq!(a.gradient_phase_seconds, 2.0 * b.gradient_phase_seconds);
        assert_eq!(a.forward_phase_seconds, b.forward_phase_seconds);
        let curve = speedup_curve(&r, 3, 1e12, &[2, 4]);
        assert_eq!(curve[0].gradient_phase_seconds, a.gradient_phase_seconds);
    }
}
