use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{init, NetConfig, VelocityNetParams};
use super::NetError;
use crate::numkit::Matrix;
use crate::scm_data::Scaler;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Trained network plus the scaler that maps raw data into model units.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub params: VelocityNetParams,
    pub scaler: Scaler,
    pub train_meta: TrainMeta,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iters_run: usize,
    pub final_loss: Option<f64>,
    pub seed: Option<u64>,
    pub data_digest: Option<String>,
    pub train_config: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    net_config: NetConfig,
    parameters: Vec<NamedTensor>,
    scaler: Scaler,
    train_meta: TrainMeta,
}

impl FlowModel {
    /// Model that works directly in data units.
    pub fn unscaled(params: VelocityNetParams) -> Self {
        let d_x = params.config.d_x;
        Self {
            params,
            scaler: Scaler::identity(d_x),
            train_meta: TrainMeta::default(),
        }
    }

    pub fn d_x(&self) -> usize {
        self.params.config.d_x
    }

    pub fn to_json(&self) -> Result<String, NetError> {
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            net_config: self.params.config.clone(),
            parameters: self
                .params
                .named_tensors()
                .into_iter()
                .map(|(name, m)| NamedTensor {
                    name,
                    shape: [m.rows(), m.cols()],
                    values: m.data().to_vec(),
                })
                .collect(),
            scaler: self.scaler.clone(),
            train_meta: self.train_meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(NetError::Format(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let mut params = init(&doc.net_config)?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != doc.parameters.len() {
            return Err(NetError::Format(format!(
                "expected {} tensors, found {}",
                names.len(),
                doc.parameters.len()
            )));
        }
        for ((slot, name), t) in params.tensors_mut().into_iter().zip(&names).zip(doc.parameters) {
            if &t.name != name || [slot.rows(), slot.cols()] != t.shape {
                return Err(NetError::Format(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {:?}",
                    t.name,
                    t.shape,
                    slot.shape()
                )));
            }
            *slot = Matrix::new(t.shape[0], t.shape[1], t.values)?;
        }
        if doc.scaler.d_x() != params.config.d_x {
            return Err(NetError::Format("scaler width does not match d_x".into()));
        }
        Ok(Self {
            params,
            scaler: doc.scaler,
            train_meta: doc.train_meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NetError> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
