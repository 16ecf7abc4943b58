//! Simulation and numerical toolkit for randomized load balancing in
//! many-server systems.
//!
//! * [`engine`]: discrete-event kernel for single-server queues and server pools.
//! * [`policies`]: dispatching rules.
//! * [`topology`]: graphs for neighbourhood-restricted dispatching.
//! * [`limits`]: fluid ODEs, fixed points and reflected diffusions.
//! * [`oracles`]: closed-form reference values.
//! * [`stats`]: estimators and run summaries.
//! * [`sweep`] and [`experiment`]: replications, parameter sweeps, config files.

pub mod engine;
mod error;
pub mod experiment;
pub mod limits;
pub mod oracles;
pub mod policies;
pub mod rng;
pub mod stats;
pub mod sweep;
pub mod topology;

pub use engine::{run, Capacity, Dynamics, SimConfig, Simulation};
pub use error::{Error, Result};
pub use policies::{Abort, Enhancement, MultiDispatcherSpec, PolicySpec, ReportMode, Scenario};
pub use stats::{Estimate, RunSummary};
pub use topology::Topology;
