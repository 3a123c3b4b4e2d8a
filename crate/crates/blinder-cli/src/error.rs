//! Error taxonomy mapped to process exit codes.

use blinder_core::anonymizer::ModelError;
use blinder_core::data::DataError;
use blinder_core::eval::EvalError;
use blinder_core::fed::FedError;
use blinder_core::nn::NnError;
use blinder_core::params::ParamError;

/// Process exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::Config,
            CliError::Data(_) => ExitCode::Data,
            CliError::Numeric(_) => ExitCode::Numeric,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidSchema(_) | DataError::InvalidSpec(_) | DataError::InvalidRatio { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::Net(NnError::NonFiniteActivation { .. })
            | ModelError::Param(ParamError::NonFinite) => CliError::Numeric(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FedError> for CliError {
    fn from(e: FedError) -> Self {
        match &e {
            FedError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            FedError::Config(_) => CliError::Config(e.to_string()),
            FedError::Model(m) => CliError::from(m.clone()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Config(_) => CliError::Config(e.to_string()),
            EvalError::Net(NnError::NonFiniteActivation { .. }) => CliError::Numeric(e.to_string()),
            EvalError::Model(m) => CliError::from(m.clone()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}
