//! Weights file: JSON keyed by network id, one entry per layer, with
//! matrices as base64 of little-endian `f64` in row-major order.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ExecutableModel;
use crate::nnet::{Activation, LayerParams, NetworkWeights};

#[derive(Debug, Error)]
pub enum WeightsFileError {
    #[error("weights json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("network `{0}` missing from weights file")]
    MissingNetwork(String),
    #[error("network `{network}` layer {layer}: {reason}")]
    BadLayer {
        network: String,
        layer: usize,
        reason: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    weights: String,
    biases: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    networks: BTreeMap<String, Vec<LayerRecord>>,
}

fn encode(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str) -> Result<Vec<f64>, WeightsFileError> {
    let bytes = STANDARD.decode(text)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn weights_to_json(weights: &BTreeMap<String, NetworkWeights>) -> String {
    let networks = weights
        .iter()
        .map(|(id, w)| {
            let layers = w
                .layers
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    activation: l.activation,
                    // `iter` walks a standard-layout array in row-major order.
                    weights: encode(l.weights.iter().copied()),
                    biases: encode(l.biases.iter().copied()),
                })
                .collect();
            (id.clone(), layers)
        })
        .collect();
    serde_json::to_string_pretty(&WeightsFile { networks }).expect("serializable")
}

pub fn weights_from_json(text: &str) -> Result<BTreeMap<String, NetworkWeights>, WeightsFileError> {
    let file: WeightsFile = serde_json::from_str(text)?;
    let mut out = BTreeMap::new();
    for (id, layers) in file.networks {
        let mut parsed = Vec::with_capacity(layers.len());
        for (k, l) in layers.into_iter().enumerate() {
            let bad = |reason: String| WeightsFileError::BadLayer {
                network: id.clone(),
                layer: k,
                reason,
            };
            let w = decode(&l.weights)?;
            let b = decode(&l.biases)?;
            if w.len() != l.fan_in * l.fan_out || b.len() != l.fan_out {
                return Err(bad(format!(
                    "expected {}x{} weights and {} biases, found {} and {}",
                    l.fan_in,
                    l.fan_out,
                    l.fan_out,
                    w.len(),
                    b.len()
                )));
            }
            parsed.push(LayerParams {
                weights: Array2::from_shape_vec((l.fan_in, l.fan_out), w)
                    .map_err(|e| bad(e.to_string()))?,
                biases: Array1::from(b),
                activation: l.activation,
            });
        }
        let nw = NetworkWeights { layers: parsed };
        nw.check().map_err(|e| WeightsFileError::BadLayer {
            network: id.clone(),
            layer: 0,
            reason: e.to_string(),
        })?;
        out.insert(id, nw);
    }
    Ok(out)
}

impl ExecutableModel {
    pub fn weights_json(&self) -> String {
        weights_to_json(&self.weights)
    }

    /// Replaces every network's weights with those in `text`; shapes must
    /// match the compiled graph.
    pub fn load_weights_json(&mut self, text: &str) -> Result<(), WeightsFileError> {
        let mut loaded = weights_from_json(text)?;
        let mut next = BTreeMap::new();
        for (id, current) in &self.weights {
            let w = loaded
                .remove(id)
                .ok_or_else(|| WeightsFileError::MissingNetwork(id.clone()))?;
            let shapes = |n: &NetworkWeights| {
                n.layers
                    .iter()
                    .map(|l| (l.fan_in(), l.fan_out(), l.activation))
                    .collect::<Vec<_>>()
            };
            if shapes(&w) != shapes(current) {
                return Err(WeightsFileError::BadLayer {
                    network: id.clone(),
                    layer: 0,
                    reason: "layer shapes differ from the graph".into(),
                });
            }
            next.insert(id.clone(), w);
        }
        self.weights = next;
        Ok(())
    }
}
