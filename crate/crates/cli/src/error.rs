use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input {artifact}: run `aelem {producer}` first")]
    Dependency {
        artifact: &'static str,
        producer: &'static str,
    },
    #[error("check failed: {0}")]
    Check(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dependency { .. } => 3,
            CliError::Check(_) => 4,
            CliError::Run(_) => 1,
        }
    }

    pub fn run(e: impl std::fmt::Display) -> Self {
        CliError::Run(e.to_string())
    }
}
