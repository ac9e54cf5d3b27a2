use std::fmt;

use scanpath_forge::data::DataError;
use scanpath_forge::evaluation::EvalError;
use scanpath_forge::models::ModelError;
use scanpath_forge::training::TrainError;

/// CLI failure classified by exit code: usage 1, I/O 2, numeric 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BadRatios(_) => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Io { .. } | TrainError::CorruptCheckpoint { .. } => {
                CliError::Io(e.to_string())
            }
            TrainError::EmptyDataset => CliError::Io(e.to_string()),
            TrainError::Model(m) => CliError::from(m),
            TrainError::Gaze(g) => CliError::Usage(g.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyDataset => CliError::Io(e.to_string()),
            EvalError::Metric { .. } => CliError::Numeric(e.to_string()),
            EvalError::Model(m) => CliError::from(m),
            EvalError::Gaze(g) => CliError::Usage(g.to_string()),
        }
    }
}

pub fn io_msg(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}
