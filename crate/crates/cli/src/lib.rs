//! Command-line front end and live session endpoint for the tactile pipeline.

pub mod args;
pub mod commands;
pub mod serve;

use std::path::Path;

use tactile_core::dataset::DatasetError;
use tactile_core::model::{ModelError, ParamsError, TrainError};
use tactile_core::session::{SessionConfig, SessionError};

/// A failure with a stable diagnostic class and exit status. Usage errors
/// exit with 2 from the argument parser before any of these arise.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Train(#[from] TrainError),
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Data(_) => "data",
            CliError::Model(_) => "model",
            CliError::Train(_) => "train",
            CliError::Threshold(_) => "threshold",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(_) => 4,
            CliError::Data(_) => 5,
            CliError::Model(_) => 6,
            CliError::Train(_) => 7,
            CliError::Threshold(_) => 8,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io(e) => CliError::Io(e),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<ParamsError> for CliError {
    fn from(e: ParamsError) -> Self {
        match e {
            ParamsError::Io(e) => CliError::Io(e),
            e => CliError::Model(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(m) => CliError::Config(m),
            SessionError::Model(e) => e.into(),
            e => CliError::Data(e.to_string()),
        }
    }
}

/// Reads a TOML session config, or the defaults when no path is given.
pub fn load_config(path: Option<&Path>) -> Result<SessionConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SessionConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}
