use optmarket::analytics::AnalyticsError;
use optmarket::clearing::ClearingError;
use optmarket::dispatch::DispatchError;
use optmarket::risk::RiskError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::Shortfall { .. } | DispatchError::Overgeneration { .. } => {
                CliError::Infeasible(e.to_string())
            }
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::NonMonotone { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ClearingError> for CliError {
    fn from(e: ClearingError) -> Self {
        match e {
            ClearingError::NoConvergence { .. } => CliError::Numerical(e.to_string()),
            ClearingError::EmptyAcceptability
            | ClearingError::ExerciseInfeasible { .. }
            | ClearingError::VolumeImbalance { .. } => CliError::Infeasible(e.to_string()),
            ClearingError::Risk(r) => r.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Dispatch(d) => d.into(),
            AnalyticsError::SpotMismatch(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}
