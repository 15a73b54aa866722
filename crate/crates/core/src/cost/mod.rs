//! Analytic VJP counts, storage counts, per-VJP costs and throughput.

pub mod counts;
pub mod curve;
pub mod report;
pub mod table;
pub mod throughput;

pub use counts::{reduction, trace_storage_count, vjp_count, TraceStorage, VjpCountSummary};
pub use curve::{
    adjoint_vs_backprop_memory_curve, linear_fit, memory_curve_csv, vjp_counts_csv, CurveConfig, MemoryCurveRow,
};
pub use report::{cost_report, group, CostReport, CostTotals};
pub use table::{averaged_vjp_flops, head_sizes, per_vjp_cost, HeadSizes, PerVjp, VjpCost, FP16_BYTES};
pub use throughput::{throughput_estimate, GpuSpec, Throughput, REFERENCE_VJP_BYTES, REFERENCE_VJP_FLOPS};
