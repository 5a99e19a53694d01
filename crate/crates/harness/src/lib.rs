//! Scripted-operator experiments: run full assembly sessions in conversation
//! and baseline mode, collect time and correct-step metrics, and replay or
//! re-score the recorded transcripts.

pub mod experiment;
pub mod policy;
pub mod replay;
pub mod session;

use thiserror::Error;

pub use experiment::{run_experiment, write_csv, Experiment, ExperimentConfig, ExperimentSummary, Stats};
pub use policy::{Goal, OperatorPolicy, PhrasingTable};
pub use replay::{replay, replay_str, score, Replay};
pub use session::{run_session, MetricsRecord, SessionRun};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("policy references unknown goal `{0}`")]
    UnknownGoal(String),
    #[error("error rate {0} is outside [0, 1]")]
    ErrorRate(f64),
    #[error("an experiment needs at least one session per mode")]
    EmptyExperiment,
    #[error(transparent)]
    Gateway(#[from] convoforge_core::GatewayError),
    #[error(transparent)]
    Transcript(#[from] convoforge_core::transcript::TranscriptError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
