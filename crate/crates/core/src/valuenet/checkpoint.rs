//! JSON checkpoint container for [`ValueNetParams`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, NetworkConfig, ValueNetParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "crowdnav-value-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerArrays {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: NetworkConfig,
    embedding: Vec<LayerArrays>,
    attention: Vec<LayerArrays>,
    head: Vec<LayerArrays>,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn export(p: &[f64], layers: &[Layer]) -> Vec<LayerArrays> {
    layers
        .iter()
        .map(|l| LayerArrays {
            inputs: l.n_in,
            outputs: l.n_out,
            weights: p[l.offset..l.bias_offset()].to_vec(),
            bias: p[l.bias_offset()..l.end()].to_vec(),
        })
        .collect()
}

fn import(dst: &mut [f64], layers: &[Layer], src: &[LayerArrays], part: &str) -> Result<()> {
    if layers.len() != src.len() {
        return Err(Error::Dimension(format!(
            "{part}: {} layers stored, config implies {}",
            src.len(),
            layers.len()
        )));
    }
    for (k, (l, a)) in layers.iter().zip(src).enumerate() {
        if a.inputs != l.n_in || a.outputs != l.n_out || a.weights.len() != l.weight_len() || a.bias.len() != l.n_out {
            return Err(Error::Dimension(format!(
                "{part} layer {k}: stored {}x{} ({} weights, {} biases), config implies {}x{}",
                a.outputs,
                a.inputs,
                a.weights.len(),
                a.bias.len(),
                l.n_out,
                l.n_in
            )));
        }
        dst[l.offset..l.bias_offset()].copy_from_slice(&a.weights);
        dst[l.bias_offset()..l.end()].copy_from_slice(&a.bias);
    }
    Ok(())
}

pub fn save_checkpoint(params: &ValueNetParams, path: &Path) -> Result<()> {
    if !params.is_finite() {
        return Err(Error::Divergence("refusing to save non-finite parameters".into()));
    }
    let p = params.params();
    let layout = params.layout();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: params.config().clone(),
        embedding: export(p, &layout.embedding),
        attention: export(p, &layout.attention),
        head: export(p, &layout.head),
    };
    let mut text = serde_json::to_string(&file).map_err(|e| Error::parse("checkpoint", e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ValueNetParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let what = format!("checkpoint {}", path.display());
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::parse(&what, e))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::parse(&what, format!("unknown format tag {:?}", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::parse(&what, e))?;
    let mut params = ValueNetParams::zeros(file.config).map_err(|e| Error::Dimension(e.to_string()))?;
    let layout = params.layout().clone();
    let dst = params.params_mut();
    import(dst, &layout.embedding, &file.embedding, "embedding")?;
    import(dst, &layout.attention, &file.attention, "attention")?;
    import(dst, &layout.head, &file.head, "head")?;
    Ok(params)
}

/// Loads and insists on the architecture in `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &NetworkConfig) -> Result<ValueNetParams> {
    let params = load_checkpoint(path)?;
    params.check_config(expected)?;
    Ok(params)
}
