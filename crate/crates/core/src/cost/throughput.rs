//! Throughput arithmetic for a single accelerator.

/// Memory per VJP batch quoted for the reference configuration
/// (diagonal, `P = 128`, `N = 225`, `bs = 8`, FP16).
pub const REFERENCE_VJP_BYTES: f64 = 0.6e6;
/// FLOPs per VJP batch quoted for the same configuration.
pub const REFERENCE_VJP_FLOPS: f64 = 1_798_144.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuSpec {
    /// Bytes per second.
    pub mem_bandwidth: f64,
    /// FP16 FLOPs per second.
    pub flops_per_sec: f64,
    pub memory_bytes: f64,
    pub mig_instances: usize,
}

impl GpuSpec {
    pub fn h100() -> Self {
        GpuSpec {
            mem_bandwidth: 3.35e12,
            flops_per_sec: 1979e12,
            memory_bytes: 80e9,
            mig_instances: 7,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mem_bandwidth > 0.0 && self.flops_per_sec > 0.0 && self.memory_bytes > 0.0 && self.mig_instances > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throughput {
    pub bandwidth_bound_vjps_per_sec: f64,
    pub compute_bound_vjps_per_sec: f64,
    pub resident_batches: f64,
}

impl Throughput {
    /// The binding limit of the two rates.
    pub fn vjps_per_sec(&self) -> f64 {
        self.bandwidth_bound_vjps_per_sec.min(self.compute_bound_vjps_per_sec)
    }
}

/// Bandwidth over bytes per VJP, FLOP rate over FLOPs per VJP, and device
/// memory over bytes per VJP.
pub fn throughput_estimate(gpu: &GpuSpec, bytes_per_vjp: f64, flops_per_vjp: f64) -> Throughput {
    Throughput {
        bandwidth_bound_vjps_per_sec: gpu.mem_bandwidth / bytes_per_vjp,
        compute_bound_vjps_per_sec: gpu.flops_per_sec / flops_per_vjp,
        resident_batches: gpu.memory_bytes / bytes_per_vjp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_constants() {
        let t = throughput_estimate(&GpuSpec::h100(), REFERENCE_VJP_BYTES, REFERENCE_VJP_FLOPS);
        assert!((t.bandwidth_bound_vjps_per_sec - 5_583_333.333).abs() < 1e-2);
        assert!((t.compute_bound_vjps_per_sec - 1_100_579_263.952).abs() < 1e-2);
        assert!((t.resident_batches - 133_333.333).abs() < 1e-2);
    }

    #[test]
    fn doubling_bandwidth_doubles_rate() {
        let mut gpu = GpuSpec::h100();
        let a = throughput_estimate(&gpu, 1e6, 1e6).bandwidth_bound_vjps_per_sec;
        gpu.mem_bandwidth *= 2.0;
        assert_eq!(throughput_estimate(&gpu, 1e6, 1e6).bandwidth_bound_vjps_per_sec, 2.0 * a);
    }
}
