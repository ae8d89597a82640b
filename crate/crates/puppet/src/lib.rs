//! Std companion to `puppet-core`: wire protocol, config and record file
//! formats, the lockstep scenario harness, socket transport and the CLI.

pub mod harness;
mod jsonpos;
pub mod metrics;
pub mod model_file;
pub mod net;
pub mod record;
pub mod scenario;
pub mod session;
pub mod wire;

pub use harness::{run_scenario, RunError, RunOutput};
pub use metrics::Metrics;
pub use record::{replay, DemoRecord};
pub use scenario::{load_scenario, Scenario};
pub use wire::{decode, encode, WireMessage};
