//! Error-to-exit-code mapping. The contract is stable for scripting:
//! 0 success, 2 usage/validation, 3 I/O, 4 domain error.

use prefiqs_core::eval::EvalError;
use prefiqs_core::jvp::JvpError;
use prefiqs_core::pfqm::FormatError;
use prefiqs_core::pruning::PruneError;
use prefiqs_core::scoring::ScoreError;
use prefiqs_core::synthlab::SynthError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Domain(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Domain(m) => m,
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::ConfigInvalid(_) | SynthError::UnsupportedArch(_) => {
                CliError::Usage(e.to_string())
            }
            SynthError::Io(io) => CliError::Io(io.to_string()),
            SynthError::NonFiniteLoss { .. } | SynthError::Parse(_) => {
                CliError::Domain(e.to_string())
            }
        }
    }
}

impl From<PruneError> for CliError {
    fn from(e: PruneError) -> Self {
        match e {
            PruneError::RhoOutOfRange(_) => CliError::Usage(e.to_string()),
            PruneError::Io(io) => CliError::Io(io.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(io) => CliError::Io(io.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<JvpError> for CliError {
    fn from(e: JvpError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => CliError::Io(io.to_string()),
            _ => CliError::Domain(e.to_string()),
        }
    }
}
