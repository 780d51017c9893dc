use std::fmt;

use bandit_gnn::estimators::EstimatorError;
use bandit_gnn::gnn::GnnError;
use bandit_gnn::graph::GraphError;
use bandit_gnn::harness::HarnessError;
use bandit_gnn::policy::PolicyError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        let m = e.to_string();
        match e {
            GraphError::Parameter(_) => Self::Usage(m),
            GraphError::Internal(_) => Self::Numeric(m),
            _ => Self::Data(m),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        let m = e.to_string();
        match e {
            PolicyError::Parameter(_) => Self::Usage(m),
            PolicyError::Checkpoint(_) | PolicyError::Io { .. } => Self::Data(m),
            PolicyError::Contract(_) | PolicyError::Internal(_) => Self::Numeric(m),
        }
    }
}

impl From<GnnError> for CliError {
    fn from(e: GnnError) -> Self {
        let m = e.to_string();
        match e {
            GnnError::Numeric(_) | GnnError::Sampling(_) => Self::Numeric(m),
            _ => Self::Data(m),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        Self::Numeric(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => Self::Usage(m),
            HarnessError::Numeric(m) => Self::Numeric(m),
            HarnessError::Model(e) => e.into(),
            HarnessError::Policy(e) => e.into(),
            HarnessError::Graph(e) => e.into(),
            HarnessError::Estimator(e) => e.into(),
            e @ HarnessError::Io { .. } => Self::Data(e.to_string()),
        }
    }
}
