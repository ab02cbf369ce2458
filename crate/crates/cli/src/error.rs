use std::process::ExitCode;

/// Exit codes are part of the interface: 2 config, 3 input, 4 solver, 5 output.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Solver(_) => 4,
            CliError::Output(_) => 5,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl From<sgmm::Error> for CliError {
    fn from(e: sgmm::Error) -> Self {
        use sgmm::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => CliError::Config(msg),
            E::DimensionMismatch { .. } | E::InvalidData(_) | E::Io(_) | E::Csv(_) => CliError::Input(msg),
            E::Identification(_) | E::Singular(_) | E::Solver(_) | E::AllFailed => CliError::Solver(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
