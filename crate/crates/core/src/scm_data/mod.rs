//! Causal datasets: synthetic generation with oracle counterfactuals, CSV
//! ingestion, splitting, standardization and propensity estimation.

mod dataset;
mod dgp;
mod prep;
mod propensity;

use std::path::Path;

pub use dataset::{load_csv, write_csv, CausalDataset, DatasetMeta};
pub use dgp::{generate_ihdp_like, oracle_counterfactual, simulate, DgpConfig, Propensity};
pub use prep::{kfold_indices, split, split_indices, standardize, Scaler};
pub use propensity::{fit_propensity, PropensityModel, PROPENSITY_CLIP};

pub(crate) use dataset::fmt_real;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("treatment must be 0 or 1, got `{value}` at row {row}")]
    Treatment { row: usize, value: String },
    #[error("unparseable value `{value}` in column `{column}` at row {row}")]
    Value {
        row: usize,
        column: String,
        value: String,
    },
    #[error("column `{column}` has {len} rows, expected {n}")]
    Length {
        column: &'static str,
        len: usize,
        n: usize,
    },
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("non-finite outcome generated at row {row}")]
    NonFinite { row: usize },
    #[error("{0}")]
    Split(String),
    #[error("propensity fit needs both treatment arms (overlap violated)")]
    Overlap,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl From<std::io::Error> for DataError {
    fn from(source: std::io::Error) -> Self {
        Self::Io {
            path: String::new(),
            source,
        }
    }
}
