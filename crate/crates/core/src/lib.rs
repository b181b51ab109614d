//! Adaptive auxiliary-task scheduling as a multi-armed bandit.
//!
//! Each auxiliary task is an arm. Every turn the scheduler picks one arm by
//! UCB, the trainer takes a joint step on the target and that auxiliary, and
//! the arm is rewarded with a mix of its (negated) loss and the cosine
//! between its gradient and the target gradient.
//!
//! * [`bandit`]: arm statistics, UCB selection, checkpoints.
//! * [`reward`]: reward components and the mixing schedule.
//! * [`environment`]: the environment seam and a synthetic quadratic suite.
//! * [`driver`]: the training loop, baselines and run traces.
//! * [`trace`]: trace files and the replay auditor.
//! * [`protocol`]: the `asap/1` sidecar protocol for external trainers.
//! * [`config`]: TOML run configuration.

pub mod bandit;
pub mod config;
pub mod driver;
pub mod environment;
pub mod error;
pub mod protocol;
pub mod reward;
pub mod trace;

pub use bandit::{ArmId, ArmStats, PolicyState};
pub use driver::{run, run_baseline, Driver, Policy, RunConfig, Trace};
pub use environment::{Environment, SyntheticEnvironment};
pub use error::{Error, Result};
pub use reward::{AlphaSchedule, GradientSummary, RewardComponents};
