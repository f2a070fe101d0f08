//! Model checkpoints.
//!
//! A checkpoint is one JSON document with fields in this order:
//!
//! ```text
//! {"format":"fedua-checkpoint","version":1,
//!  "config":{"input_length":..,"embedding_length":..,"layers":[{"kind":"conv1d",..},..]},
//!  "layers":[{"index":0,"kind":"conv1d","tensors":[{"name":"weight","shape":[..],"data":[..]},..]},..]}
//! ```
//!
//! Every layer appears in `layers`, parameter-free ones with an empty
//! `tensors` list. Values are written in shortest round-trip decimal form and
//! parsed back exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "fedua-checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    version: u32,
    config: ModelConfig,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    index: usize,
    kind: String,
    tensors: Vec<TensorDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorDoc {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

pub fn write_checkpoint<W: Write>(mut writer: W, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let shapes = config.shapes()?;
    if params.layers.len() != config.layers.len() {
        return Err(Error::dim("parameter layers do not match the configuration"));
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (i, (spec, tensors)) in config.layers.iter().zip(&params.layers).enumerate() {
        let specs = spec.params(shapes[i]);
        if specs.len() != tensors.len() {
            return Err(Error::dim(format!(
                "layer {i} has {} tensors, expected {}",
                tensors.len(),
                specs.len()
            )));
        }
        let mut docs = Vec::with_capacity(tensors.len());
        for (s, t) in specs.iter().zip(tensors) {
            if !t.is_finite() {
                return Err(Error::NonFinite(format!("layer {i} {}", s.name)));
            }
            docs.push(TensorDoc {
                name: s.name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            });
        }
        layers.push(LayerDoc {
            index: i,
            kind: spec.name().to_string(),
            tensors: docs,
        });
    }
    let doc = CheckpointDoc {
        format: FORMAT_TAG.to_string(),
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        layers,
    };
    serde_json::to_writer(&mut writer, &doc).map_err(|e| bad(e.to_string()))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<(ModelConfig, ModelParams)> {
    let doc: CheckpointDoc = serde_json::from_reader(reader).map_err(|e| bad(e.to_string()))?;
    if doc.format != FORMAT_TAG {
        return Err(bad(format!("unexpected format tag {:?}", doc.format)));
    }
    if doc.version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {}", doc.version)));
    }
    let shapes = doc.config.shapes().map_err(|e| bad(e.to_string()))?;
    if doc.layers.len() != doc.config.layers.len() {
        return Err(bad("layer count differs from the configuration"));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, (spec, layer)) in doc.config.layers.iter().zip(doc.layers).enumerate() {
        if layer.index != i || layer.kind != spec.name() {
            return Err(bad(format!("layer {i} is out of order or mislabelled")));
        }
        let specs = spec.params(shapes[i]);
        if specs.len() != layer.tensors.len() {
            return Err(bad(format!("layer {i} has the wrong number of tensors")));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for (s, t) in specs.into_iter().zip(layer.tensors) {
            if t.name != s.name || t.shape != s.shape {
                return Err(bad(format!("layer {i} tensor {} does not match {:?}", t.name, s.shape)));
            }
            tensors.push(Tensor::new(t.shape, t.data).map_err(|e| bad(e.to_string()))?);
        }
        layers.push(tensors);
    }
    Ok((
        doc.config,
        ModelParams {
            version: doc.version,
            layers,
        },
    ))
}

pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, config, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
