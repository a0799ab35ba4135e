//! Model checkpoints: `name.json` holds the network spec, the pixel-mean
//! shape and a manifest of tensors; `name.bin` holds every tensor as
//! little-endian `f32`, in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use cade_core::aggregate::Model;
use cade_core::convnet::{NetworkParams, NetworkSpec, ParamTensor};
use cade_core::sampler::MeanImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT: &str = "cade-checkpoint-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub spec: NetworkSpec,
    pub mean_shape: [usize; 4],
    pub tensors: Vec<TensorEntry>,
}

pub fn blob_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Layer kind and weight shape of each parametric tensor, in order.
fn weight_shapes(spec: &NetworkSpec, tensors: &[ParamTensor]) -> Vec<(String, Vec<usize>)> {
    let mut kinds = Vec::new();
    for (i, c) in spec.conv.iter().enumerate() {
        kinds.push((format!("conv{i}"), c.filters, false));
    }
    for (i, l) in spec.locally_connected.iter().enumerate() {
        kinds.push((format!("local{i}"), l.filters, true));
    }
    for i in 0..=spec.fully_connected.len() {
        kinds.push((format!("dense{i}"), 0, false));
    }
    kinds
        .into_iter()
        .zip(tensors)
        .map(|((name, filters, local), t)| {
            let n = t.weights.len();
            let shape = if filters == 0 {
                vec![t.bias.len(), n / t.bias.len().max(1)]
            } else if local {
                let positions = t.bias.len() / filters;
                vec![filters, n / (filters * positions).max(1), positions]
            } else {
                vec![filters, n / filters]
            };
            (name, shape)
        })
        .collect()
}

pub fn write(header_path: &Path, model: &Model) -> Result<[PathBuf; 2]> {
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, values: &[f64], blob: &mut Vec<u8>| {
        tensors.push(TensorEntry { name, shape, offset: blob.len() / 4 });
        for &v in values {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    let shapes = weight_shapes(&model.params.spec, &model.params.tensors);
    for ((name, shape), t) in shapes.into_iter().zip(&model.params.tensors) {
        push(format!("{name}.weights"), shape, &t.weights, &mut blob);
        push(format!("{name}.bias"), vec![t.bias.len()], &t.bias, &mut blob);
    }
    push("pixel_mean".into(), model.mean.shape.to_vec(), &model.mean.values, &mut blob);
    let header = CheckpointHeader {
        format: FORMAT.into(),
        spec: model.params.spec.clone(),
        mean_shape: model.mean.shape,
        tensors,
    };
    let blob_file = blob_path(header_path);
    fs::write(header_path, serde_json::to_string_pretty(&header).expect("header serializes"))
        .map_err(Error::io(header_path))?;
    fs::write(&blob_file, blob).map_err(Error::io(&blob_file))?;
    Ok([header_path.to_path_buf(), blob_file])
}

pub fn read(header_path: &Path) -> Result<Model> {
    let text = fs::read_to_string(header_path).map_err(Error::io(header_path))?;
    let header: CheckpointHeader = serde_json::from_str(&text).map_err(|e| Error::format(header_path, e))?;
    if header.format != FORMAT {
        return Err(Error::format(header_path, format!("unknown checkpoint format {:?}", header.format)));
    }
    let blob_file = blob_path(header_path);
    let bytes = fs::read(&blob_file).map_err(Error::io(&blob_file))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(&blob_file, "length is not a multiple of 4"));
    }
    let values: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
    let mut slices = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0;
    for t in &header.tensors {
        let len: usize = t.shape.iter().product();
        if t.offset != expected_offset || t.offset + len > values.len() {
            return Err(Error::format(header_path, format!("tensor {} lies outside the blob", t.name)));
        }
        slices.push(values[t.offset..t.offset + len].to_vec());
        expected_offset += len;
    }
    if expected_offset != values.len() {
        return Err(Error::format(&blob_file, "blob length does not match the manifest"));
    }
    let mean_values = slices.pop().ok_or_else(|| Error::format(header_path, "empty tensor manifest"))?;
    if slices.len() % 2 != 0 {
        return Err(Error::format(header_path, "weights and biases must come in pairs"));
    }
    let mut tensors = Vec::with_capacity(slices.len() / 2);
    let mut it = slices.into_iter();
    while let (Some(weights), Some(bias)) = (it.next(), it.next()) {
        tensors.push(ParamTensor { weights, bias });
    }
    let params = NetworkParams::from_tensors(header.spec, tensors).map_err(|e| Error::format(header_path, e))?;
    let mean = MeanImage { shape: header.mean_shape, values: mean_values };
    Model::new(params, mean).map_err(|e| Error::format(header_path, e))
}
