//! Independent gradient oracles: finite differences and a reverse-mode tape.

pub mod compare;
pub mod fd;
pub mod tape;

pub use compare::{compare_gradients, relative_error, BlockStats, Comparison, Tolerance};
pub use fd::{central_differences, finite_difference_gradient, FdConfig};
pub use tape::{tape_gradient, tape_memory_count, Op, Tape, TapeCounts, TapeNode, TapeOptions};
