use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("design component `{component}` = {value} is outside [-pi/2, pi/2]")]
    OutOfBounds { component: String, value: f64 },
    #[error("expected {expected} free design coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("action component {index} ({name}) is not finite: {value}")]
    NonFiniteAction { index: usize, name: &'static str, value: f64 },
    #[error("invalid simulator parameter `{0}`")]
    InvalidParam(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("reward mode {mode:?} does not match command frame {frame:?}")]
    FrameMismatch { mode: crate::rewards::CommandFrame, frame: crate::rewards::CommandFrame },
    #[error("metric buffer incomplete: env {env} has {got} of {expected} steps")]
    IncompleteBuffer { env: usize, got: usize, expected: usize },
    #[error("metric buffer is empty")]
    EmptyBuffer,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("buffer length mismatch: {what}")]
    Length { what: String },
    #[error("non-finite loss in PPO update")]
    NonFiniteLoss,
    #[error("checkpoint fingerprint mismatch: file has `{found}`, expected `{expected}`")]
    Fingerprint { found: String, expected: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("need at least {needed} observations, have {have}")]
    TooFewPoints { needed: usize, have: usize },
    #[error("covariance not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum CodesignError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("evaluation log {path}, line {line}: {reason}")]
    CorruptLog { path: PathBuf, line: usize, reason: String },
    #[error("evaluation log does not match this experiment at iteration {iteration}: {reason}")]
    LogMismatch { iteration: usize, reason: String },
    #[error("evaluation budget {budget} is smaller than the initial design size {initial}")]
    Budget { budget: usize, initial: usize },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("evaluator failed: {0}")]
    Evaluator(String),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("evaluation log line is not valid json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config section `{section}`, key `{key}`: {message}")]
    Invalid { section: String, key: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("no report inputs in {dir}; expected at least one of: {expected}")]
    NoInputs { dir: PathBuf, expected: String },
    #[error("malformed input {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Codesign(#[from] CodesignError),
}
