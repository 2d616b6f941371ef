//! Checkpoint files: a JSON manifest plus a sibling binary of little-endian
//! `f32` values concatenated in manifest order.
//!
//! Parameters are held as `f64` in memory and narrowed on save, so a loaded
//! network equals the saved one after [`MlpParams::round_to_f32`]. Saving a
//! loaded checkpoint reproduces both files byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Arch, Dense, MlpParams};
use crate::error::{Error, Result};

const FORMAT: &str = "arq-mlp-v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the binary file.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub activation: Activation,
    pub weight: TensorEntry,
    pub bias: TensorEntry,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkEntry {
    pub name: String,
    pub arch: Arch,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub binary: String,
    pub total_bytes: u64,
    pub networks: Vec<NetworkEntry>,
    pub meta: serde_json::Value,
}

/// A named set of networks with free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub networks: Vec<(String, MlpParams)>,
    pub meta: serde_json::Value,
}

fn bin_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint {
            networks: Vec::new(),
            meta,
        }
    }

    pub fn with(mut self, name: &str, params: &MlpParams) -> Self {
        self.networks.push((name.to_string(), params.clone()));
        self
    }

    pub fn get(&self, name: &str) -> Result<&MlpParams> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::contract(format!("checkpoint has no network named {name:?}")))
    }

    /// Serialize to `(manifest json, binary payload)`.
    pub fn encode(&self, binary_name: &str) -> Result<(String, Vec<u8>)> {
        let mut bytes = Vec::new();
        let mut networks = Vec::with_capacity(self.networks.len());
        let mut push = |name: String, shape: Vec<usize>, values: &mut dyn Iterator<Item = f64>| {
            let offset = bytes.len() as u64;
            for v in values {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            TensorEntry { name, shape, offset }
        };
        for (net_name, params) in &self.networks {
            let mut layers = Vec::new();
            for (i, l) in params.layers().iter().enumerate() {
                let weight = push(
                    format!("{net_name}.{i}.weight"),
                    vec![l.out_dim(), l.in_dim()],
                    &mut l.weight.iter().copied(),
                );
                let bias = push(format!("{net_name}.{i}.bias"), vec![l.out_dim()], &mut l.bias.iter().copied());
                layers.push(LayerEntry {
                    activation: l.activation,
                    weight,
                    bias,
                });
            }
            networks.push(NetworkEntry {
                name: net_name.clone(),
                arch: params.arch(),
                layers,
            });
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            binary: binary_name.to_string(),
            total_bytes: bytes.len() as u64,
            networks,
            meta: self.meta.clone(),
        };
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        Ok((json, bytes))
    }

    pub fn decode(manifest_json: &str, bytes: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(manifest_json)?;
        if manifest.format != FORMAT {
            return Err(Error::contract(format!("unknown checkpoint format {:?}", manifest.format)));
        }
        if manifest.total_bytes != bytes.len() as u64 {
            return Err(Error::contract(format!(
                "binary holds {} bytes, manifest expects {}",
                bytes.len(),
                manifest.total_bytes
            )));
        }
        let read = |t: &TensorEntry| -> Result<Vec<f64>> {
            let count: usize = t.shape.iter().product();
            let start = t.offset as usize;
            let end = start + 4 * count;
            if end > bytes.len() || !t.offset.is_multiple_of(4) {
                return Err(Error::contract(format!("tensor {} out of bounds", t.name)));
            }
            Ok(bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect())
        };
        let mut networks = Vec::new();
        for net in &manifest.networks {
            let mut layers = Vec::new();
            for l in &net.layers {
                let [out_dim, in_dim] = l.weight.shape[..] else {
                    return Err(Error::contract(format!("weight {} must be 2-d", l.weight.name)));
                };
                if l.bias.shape != [out_dim] {
                    return Err(Error::contract(format!("bias {} shape mismatch", l.bias.name)));
                }
                let weight = Array2::from_shape_vec((out_dim, in_dim), read(&l.weight)?)
                    .map_err(|e| Error::contract(e.to_string()))?;
                let bias = Array1::from(read(&l.bias)?);
                layers.push(Dense {
                    weight,
                    bias,
                    activation: l.activation,
                });
            }
            networks.push((net.name.clone(), MlpParams::from_layers(net.arch, layers)?));
        }
        Ok(Checkpoint {
            networks,
            meta: manifest.meta,
        })
    }

    /// Write `path` (manifest) and `path.with_extension("bin")`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bin = bin_path(path);
        let bin_name = bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (json, bytes) = self.encode(&bin_name)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
        fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&json)?;
        let bin = path.with_file_name(&manifest.binary);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        Self::decode(&json, &bytes)
    }
}
