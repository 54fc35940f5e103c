//! Parameter files: raw little-endian `f64` values in `<stem>.bin` plus a JSON
//! sidecar `<stem>.json` naming the module and its layer shapes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{LayerShape, ParamVector};
use crate::error::{PacerError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub module: String,
    pub layers: Vec<LayerShape>,
    pub num_values: usize,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn encode(params: &ParamVector) -> Vec<u8> {
    params.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode(bytes: &[u8], layout: Vec<LayerShape>) -> Result<ParamVector> {
    if bytes.len() % 8 != 0 {
        return Err(PacerError::Checkpoint(format!(
            "parameter blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ParamVector::new(values, layout).map_err(|e| PacerError::Checkpoint(e.to_string()))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_params(stem: &Path, module: &str, params: &ParamVector) -> Result<()> {
    let (bin, json) = paths(stem);
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&bin, encode(params))?;
    let header = ParamHeader {
        module: module.to_string(),
        layers: params.layout().to_vec(),
        num_values: params.len(),
    };
    fs::write(&json, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn load_params(stem: &Path) -> Result<(ParamHeader, ParamVector)> {
    let (bin, json) = paths(stem);
    let header_text = fs::read_to_string(&json)
        .map_err(|e| PacerError::Checkpoint(format!("{}: {e}", json.display())))?;
    let header: ParamHeader = serde_json::from_str(&header_text)
        .map_err(|e| PacerError::Checkpoint(format!("{}: {e}", json.display())))?;
    let bytes = fs::read(&bin).map_err(|e| PacerError::Checkpoint(format!("{}: {e}", bin.display())))?;
    let params = decode(&bytes, header.layers.clone())?;
    if params.len() != header.num_values {
        return Err(PacerError::Checkpoint(format!(
            "{} declares {} values but holds {}",
            json.display(),
            header.num_values,
            params.len()
        )));
    }
    Ok((header, params))
}
