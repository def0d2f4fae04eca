//! Stability classification for a two-station, four-class reentrant
//! queueing network with MAP arrivals and Markovian service processes.
//!
//! The network state is modelled as a Markov modulated reflecting random
//! walk on Z₊⁴. Induced chains on the saturated faces give drift vectors,
//! and the ratio test r₁r₂ ⋚ 1 decides positive recurrence or transience.

pub mod error;
pub mod generator;
pub mod induced_chains;
pub mod linalg;
pub mod primitives;
pub mod service_disciplines;
pub mod simulator;
pub mod stability;
pub mod subset;

pub use error::{Error, Result};
pub use generator::{BlockKernel, Generator};
pub use induced_chains::{drift_table, DriftMode, DriftTable};
pub use primitives::{MapSpec, PhSpec};
pub use service_disciplines::{Discipline, MspSpec, NetworkModel};
pub use stability::{classify, Classification, ClassifyOptions, StabilityReport};
pub use subset::Subset;
