//! Adjoint-sharded gradients for stacked state-space residual models.
//!
//! The crate is organised around the forward trace: [`ssm`] runs the model
//! and keeps the tensors the gradient needs, [`adjoint`] turns them into
//! independent vector-Jacobian products, [`reference`] provides
//! finite-difference and tape oracles, [`distributed`] replays the whole
//! pipeline across simulated devices, and [`cost`] does the arithmetic on
//! memory and FLOPs.

pub mod adjoint;
pub mod cost;
pub mod distributed;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod reference;
pub mod ssm;

pub use error::{Error, Result};
