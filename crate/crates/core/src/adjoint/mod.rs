//! Adjoint states, per-token VJP tasks and gradient assembly.

pub mod engine;
pub mod grad;
pub mod identity;
pub mod states;
pub mod view;
pub mod vjp;

pub use engine::{
    adjoint_batch, adjoint_gradient, adjoint_gradient_counted, layer_gradient, run_task, token_layer_contribution,
    NetCounts, Truncation, VjpCounts,
};
pub use grad::GradVector;
pub use identity::{head_jacobian, outer_product_identity_check, IdentityCheck, IDENTITY_TOL};
pub use states::{compute_adjoint_states, transition_range, window_start, AdjointBatch};
pub use view::TraceView;
pub use vjp::{build_cotangents, vjp_head, VjpTask};
