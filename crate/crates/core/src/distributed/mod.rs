//! Multi-device simulation: layer-block placement, a pipelined forward
//! pass with explicit messages, and the sharded gradient.

pub mod device;
pub mod plan;
pub mod sim;
pub mod speedup;

pub use device::{
    protocol_conforms, render_log, Destination, DeviceMemory, DeviceMsg, DeviceShard, HeadState, MessageLog,
    MessageRecord,
};
pub use plan::{plan_shards, DevicePlan, Placement, ShardPlan, Tensor};
pub use sim::{distributed_adjoint_gradient, distributed_forward, DistributedForward, DistributedGradient, Reduction};
pub use speedup::{forward_flops_per_token_layer, simulate_speedup, speedup_curve, SpeedupEstimate, SpeedupRow};
