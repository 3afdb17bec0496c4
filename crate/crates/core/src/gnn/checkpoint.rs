//! Checkpoint files: a JSON document whose weight matrices are base64
//! strings of little-endian `f64`, row-major `[d_in, d_out]`.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GnnArch, GnnParams, LayerParams, TrainConfig};
use crate::grad::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerBlob {
    pub edge: String,
    pub antenna: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub arch: GnnArch,
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
    pub dataset_fingerprint: Option<String>,
    pub layers: Vec<LayerBlob>,
}

fn encode(t: &Tensor) -> String {
    let bytes: Vec<u8> = t.data.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str, din: usize, dout: usize) -> Result<Tensor> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::ShapeMismatch(format!("bad weight blob: {e}")))?;
    if bytes.len() != din * dout * 8 {
        return Err(Error::ShapeMismatch(format!(
            "weight blob has {} bytes, expected {} for [{din}, {dout}]",
            bytes.len(),
            din * dout * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(vec![din, dout], data)
}

impl Checkpoint {
    pub fn new(
        params: &GnnParams,
        train_config: Option<&TrainConfig>,
        dataset_fingerprint: Option<String>,
    ) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            arch: params.arch.clone(),
            train_config: train_config.cloned(),
            seed: train_config.map_or(0, |c| c.seed),
            dataset_fingerprint,
            layers: params
                .layers
                .iter()
                .map(|l| LayerBlob {
                    edge: encode(&l.edge),
                    antenna: encode(&l.antenna),
                    user: encode(&l.user),
                })
                .collect(),
        }
    }

    /// Decodes the weights for the stored architecture.
    pub fn params(&self) -> Result<GnnParams> {
        self.params_for(&self.arch)
    }

    /// Decodes the weights, requiring them to fit `arch`.
    pub fn params_for(&self, arch: &GnnArch) -> Result<GnnParams> {
        arch.validate()?;
        let widths = arch.widths();
        if self.layers.len() != widths.len() - 1 || arch.widths() != self.arch.widths() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint widths {:?} do not fit {:?}",
                self.arch.widths(),
                widths
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(widths.windows(2))
            .map(|(b, w)| {
                Ok(LayerParams {
                    edge: decode(&b.edge, w[0], w[1])?,
                    antenna: decode(&b.antenna, w[0], w[1])?,
                    user: decode(&b.user, w[0], w[1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GnnParams {
            arch: arch.clone(),
            layers,
        })
    }
}

pub fn save_params(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(ckpt)?)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or(Error::BadMagic)? as u32;
    if found != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}
