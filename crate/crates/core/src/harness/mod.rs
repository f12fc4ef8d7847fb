//! Actor loop, actor/learner scheduling, the policy symmetry gap, metrics files and the
//! paired normal-versus-augmented experiment.

pub mod actor;
pub mod config;
pub mod experiment;
pub mod gap;
pub mod metrics;
pub mod schedule;

pub use actor::{run_actor_steps, ActorState};
pub use config::{ExperimentConfig, Task};
pub use experiment::{run_experiment, train_run, train_to_file, ExperimentSummary, RunOutcome};
pub use gap::symmetry_gap;
pub use metrics::{read_metrics, MetricsHeader, MetricsRecord, MetricsWriter};
pub use schedule::{env_steps_due, Scheduler};
