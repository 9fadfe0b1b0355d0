//! Flat binary checkpoint container.
//!
//! Layout: the 8 bytes `DIREPCK1`, a little-endian `u64` header length, a
//! UTF-8 JSON header, then every tensor's values little-endian in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, Layer, LayerSpec, ModelLayout, ModelSet, Network, Role};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DIREPCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub role: Role,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub seed: u64,
    pub arch: ArchConfig,
    pub layout: ModelLayout,
    pub networks: Vec<NetworkEntry>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Real>(path: &Path, models: &ModelSet<T>, seed: u64) -> Result<()> {
    let nets = models.networks();
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for net in &nets {
        for (name, t) in net.named_params() {
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
            });
            t.data().iter().for_each(|v| v.write_le(&mut payload));
        }
    }
    let header = CheckpointHeader {
        dtype: T::DTYPE.to_string(),
        seed,
        arch: models.arch.clone(),
        layout: models.layout,
        networks: nets
            .iter()
            .map(|n| NetworkEntry {
                role: n.role(),
                layers: n.specs(),
            })
            .collect(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(ModelSet<T>, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::format(path, e.to_string()))?;
    if header.dtype != T::DTYPE {
        return Err(Error::format(
            path,
            format!("checkpoint holds {} values, requested {}", header.dtype, T::DTYPE),
        ));
    }
    let mut cursor = 16 + hlen;
    let mut entries = header.tensors.iter();
    let mut read_tensor = |shape: &[usize]| -> Result<Tensor<T>> {
        let entry = entries
            .next()
            .ok_or_else(|| Error::format(path, "fewer tensors than layers"))?;
        if entry.shape != shape {
            return Err(Error::format(
                path,
                format!("{} has shape {:?}, layer wants {:?}", entry.name, entry.shape, shape),
            ));
        }
        let n: usize = shape.iter().product();
        let end = cursor + n * T::BYTES;
        let raw = bytes
            .get(cursor..end)
            .ok_or_else(|| Error::format(path, format!("truncated payload in {}", entry.name)))?;
        cursor = end;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(Tensor::new(shape.to_vec(), data)?)
    };
    let mut nets: Vec<Network<T>> = Vec::new();
    for entry in &header.networks {
        let mut layers = Vec::new();
        for &spec in &entry.layers {
            let weight = read_tensor(&[spec.input, spec.output])?;
            let bias = read_tensor(&[spec.output])?;
            layers.push(Layer { spec, weight, bias });
        }
        nets.push(Network::from_layers(entry.role, layers)?);
    }
    if cursor != bytes.len() {
        return Err(Error::format(path, "trailing bytes after payload"));
    }
    let mut take = |role: Role| nets.iter().position(|n| n.role() == role).map(|i| nets.remove(i));
    let missing = |role: Role| Error::format(path, format!("checkpoint lacks network {}", role.tag()));
    let models = ModelSet {
        arch: header.arch.clone(),
        layout: header.layout,
        generator: take(Role::Generator).ok_or_else(|| missing(Role::Generator))?,
        classifier: take(Role::Classifier).ok_or_else(|| missing(Role::Classifier))?,
        discriminator: take(Role::Discriminator).ok_or_else(|| missing(Role::Discriminator))?,
        encoder: take(Role::Encoder),
        decoder: take(Role::Decoder),
        private_source: take(Role::PrivateSource),
        private_target: take(Role::PrivateTarget),
    };
    Ok((models, header))
}
