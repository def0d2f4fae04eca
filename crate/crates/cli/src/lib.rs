//! Command implementations behind the `netstab` binary: model files,
//! sweeps, and the report writers.

pub mod commands;
pub mod error;
pub mod model_file;
pub mod sweep;
