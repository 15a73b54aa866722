//! Run configuration, synthetic data, training and the CLI modes.

pub mod config;
pub mod data;
pub mod modes;
pub mod train;

pub use config::{parse_switch, LossKind, Mode, RunConfig};
pub use data::{planted_successor, Sample, SyntheticTask};
pub use modes::{cmd_cost, cmd_curves, cmd_distcheck, cmd_gradcheck, cmd_train, run, Report};
pub use train::{batch_gradient, train, GradientSource, TrainLog};
