use std::io;

use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid instance: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum SolutionError {
    #[error("solution holds no jobs")]
    Empty,
    #[error("solution has {found_jobs} jobs (or mismatched operation counts), instance has {expected_jobs}")]
    Dimension { expected_jobs: usize, found_jobs: usize },
    #[error("infeasible solution: {0}")]
    Infeasible(Violation),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("job {0} has no operation left to schedule")]
    JobComplete(usize),
    #[error("job {0} does not exist")]
    UnknownJob(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("episode is already finished")]
    Terminal,
    #[error("action {action} is masked: {reason}")]
    Masked { action: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error(transparent)]
    Solution(#[from] SolutionError),
    #[error("prefix cannot be replayed: {0}")]
    Prefix(#[from] EnvError),
    #[error("initial solution does not extend the pinned prefix (operation {op})")]
    PrefixMismatch { op: usize },
    #[error("schedule cannot be replayed: {0}")]
    Replay(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no demonstrations to train on")]
    Empty,
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },
    #[error("expert failed for actor {actor} on {instance}: {source}")]
    Expert { actor: usize, instance: String, source: ExpertError },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] io::Error),
}
