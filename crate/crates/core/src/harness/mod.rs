//! Training loop, regret simulation and variance reports.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::estimators::EstimatorError;
use crate::gnn::GnnError;
use crate::graph::GraphError;
use crate::matrix::DenseMatrix;
use crate::policy::PolicyError;

pub mod regret;
pub mod report;
pub mod train;

pub use regret::{simulate_regret, RegretRow, RegretSpec, RegretTrace, StreamKind};
pub use report::{variance_report, VarianceReport, VarianceReportRow};
pub use train::{block_rewards, layer0_alphas, train, EpochLog, SamplerKind, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Model(#[from] GnnError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Copies rows `idx` of `m` into a new matrix, in order.
pub fn select_rows(m: &DenseMatrix, idx: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}
