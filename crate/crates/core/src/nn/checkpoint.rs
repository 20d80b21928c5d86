//! Binary checkpoint: magic, format version, JSON header, then every
//! network's parameters as little-endian f64 in `flat_params` order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"WXRLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Input normalization applied before the first layer.
    pub feature_map: String,
    pub metadata: BTreeMap<String, String>,
    pub networks: Vec<NetworkSpec>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub networks: Vec<(String, DenseNet)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&DenseNet> {
        self.networks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, net)| net)
            .ok_or_else(|| Error::Parse(format!("checkpoint has no network {name:?}")))
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.header.metadata.get(key).map(String::as_str)
    }
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    feature_map: &str,
    metadata: &BTreeMap<String, String>,
    networks: &[(&str, &DenseNet)],
) -> Result<()> {
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        feature_map: feature_map.to_string(),
        metadata: metadata.clone(),
        networks: networks
            .iter()
            .map(|(name, net)| NetworkSpec {
                name: name.to_string(),
                layers: net
                    .layers()
                    .iter()
                    .map(|l| LayerSpec {
                        input: l.input_dim(),
                        output: l.output_dim(),
                        activation: l.activation,
                    })
                    .collect(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, net) in networks {
        for v in net.flat_params() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Parse("not a checkpoint file".into()));
    }
    let mut buf4 = [0u8; 4];
    input.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut buf8 = [0u8; 8];
    input.read_exact(&mut buf8)?;
    let len = u64::from_le_bytes(buf8) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Parse(e.to_string()))?;
    let mut networks = Vec::with_capacity(header.networks.len());
    for spec in &header.networks {
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let mut w = vec![0.0; l.input * l.output];
            for v in &mut w {
                input.read_exact(&mut buf8)?;
                *v = f64::from_le_bytes(buf8);
            }
            let mut b = vec![0.0; l.output];
            for v in &mut b {
                input.read_exact(&mut buf8)?;
                *v = f64::from_le_bytes(buf8);
            }
            layers.push(Layer {
                weights: Array2::from_shape_vec((l.input, l.output), w)
                    .map_err(|e| Error::Parse(e.to_string()))?,
                bias: Array1::from_vec(b),
                activation: l.activation,
            });
        }
        networks.push((spec.name.clone(), DenseNet::from_layers(layers)?));
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after checkpoint parameters",
            rest.len()
        )));
    }
    Ok(Checkpoint { header, networks })
}

pub fn save_checkpoint(
    path: &Path,
    feature_map: &str,
    metadata: &BTreeMap<String, String>,
    networks: &[(&str, &DenseNet)],
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    write_checkpoint(file, feature_map, metadata, networks)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
