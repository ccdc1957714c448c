//! Conditional velocity field `v(y, t; x, a)`.
//!
//! Layout: a scalar outcome embedding, a FiLM layer driven by the
//! conditioning vector `(x, a, enc(t))`, two gated residual blocks with
//! averaging skips, and a projection to one velocity head per treatment arm.

mod forward;
mod model;
mod params;

pub use forward::{forward, forward_batch, forward_tape, register_params, ConditionedField};
pub use model::{FlowModel, TrainMeta, MODEL_FORMAT_VERSION};
pub use params::{init, Affine, GatedBlock, NetConfig, TimeEncoding, VelocityNetParams, N_RES_BLOCKS};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("time {0} outside [0, 1]")]
    TimeDomain(f64),
    #[error("covariate dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("treatment must be 0 or 1, got {0}")]
    Treatment(u8),
    #[error("batch length mismatch: {0}")]
    Batch(String),
    #[error("invalid net config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
