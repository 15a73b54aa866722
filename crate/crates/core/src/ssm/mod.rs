//! The stacked SSM model: types, parameters, forward pass and losses.

pub mod config;
pub mod dims;
pub mod forward;
pub mod loss;
pub mod params;
pub mod trace_io;

pub use config::{H0Policy, KeyValues, ModelConfig};
pub use dims::{Activation, ModelDims, Net, SsmVariant, StateKind};
pub use forward::{
    apply_transition, head_eval, normalize, normalize_with, omega_gradient, ssm_layer_forward, stack_forward,
    ForwardTrace, LayerOutputs, StorageBreakdown, NORM_EPS,
};
pub use loss::LossSpec;
pub use params::{Block, HeadParams, LayerParams, ParamLayout, StackParams};
