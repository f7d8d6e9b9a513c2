//! Model bundles and the PTIF v1 container:
//! `b"PTIF"`, `u32` LE manifest length, JSON manifest, little-endian `f32` blob.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{ModelError, Result};
use crate::fixed::{FixedPointParams, PlainTensor};
use crate::nn::{AffineParams, FcWeights};

pub const PTIF_MAGIC: &[u8; 4] = b"PTIF";
pub const PTIF_VERSION: u32 = 1;

/// A named float32 tensor as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Encoded weights of one encoder block.
#[derive(Clone, Debug)]
pub struct BlockWeights {
    /// Q, K and V projections stacked row-wise: `[3E, E]`.
    pub qkv: FcWeights,
    pub out: FcWeights,
    pub ln1: AffineParams,
    pub ln2: AffineParams,
    pub fc1: FcWeights,
    pub fc2: FcWeights,
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    config: ModelConfig,
    tensors: BTreeMap<String, WeightTensor>,
    blocks: Vec<BlockWeights>,
    head: Option<FcWeights>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    offset: usize,
    dims: Vec<usize>,
    dtype: String,
}

/// Every tensor name and shape the config requires.
fn expected_tensors(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (e, f) = (c.embed_dim, c.ffn_dim);
    let mut out = Vec::new();
    for i in 0..c.n_blocks {
        let p = format!("blocks.{i}");
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.attn.{m}.weight"), vec![e, e]));
            out.push((format!("{p}.attn.{m}.bias"), vec![e]));
        }
        for ln in ["ln1", "ln2"] {
            out.push((format!("{p}.{ln}.gamma"), vec![e]));
            out.push((format!("{p}.{ln}.beta"), vec![e]));
        }
        out.push((format!("{p}.ffn.fc1.weight"), vec![f, e]));
        out.push((format!("{p}.ffn.fc1.bias"), vec![f]));
        out.push((format!("{p}.ffn.fc2.weight"), vec![e, f]));
        out.push((format!("{p}.ffn.fc2.bias"), vec![e]));
    }
    if c.num_labels > 0 {
        out.push(("head.weight".into(), vec![c.num_labels, e]));
        out.push(("head.bias".into(), vec![c.num_labels]));
    }
    out
}

impl ModelBundle {
    /// Validates names and dims against `config` and encodes to fixed point.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, WeightTensor>) -> Result<Self> {
        config.validate()?;
        for (name, dims) in expected_tensors(&config) {
            let t = tensors.get(&name).ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if t.dims != dims {
                return Err(ModelError::DimMismatch {
                    name,
                    expected: dims,
                    got: t.dims.clone(),
                }
                .into());
            }
        }
        let fp = config.fixed()?;
        let enc = |name: &str| -> Result<PlainTensor> {
            let t = &tensors[name];
            let vals: Vec<f64> = t.values.iter().map(|&v| v as f64).collect();
            PlainTensor::encode(t.dims.clone(), &vals, &fp)
        };
        let fc = |p: &str| -> Result<FcWeights> { FcWeights::new(enc(&format!("{p}.weight"))?, enc(&format!("{p}.bias"))?) };
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let p = format!("blocks.{i}");
            let q = fc(&format!("{p}.attn.q"))?;
            let k = fc(&format!("{p}.attn.k"))?;
            let v = fc(&format!("{p}.attn.v"))?;
            let e = config.embed_dim;
            let qkv = FcWeights::new(
                PlainTensor::new(vec![3 * e, e], [q.weight.data(), k.weight.data(), v.weight.data()].concat())?,
                PlainTensor::new(vec![3 * e], [q.bias.data(), k.bias.data(), v.bias.data()].concat())?,
            )?;
            let ln = |n: &str| -> Result<AffineParams> {
                AffineParams::new(
                    enc(&format!("{p}.{n}.gamma"))?.into_data(),
                    enc(&format!("{p}.{n}.beta"))?.into_data(),
                    &fp,
                )
            };
            blocks.push(BlockWeights {
                qkv,
                out: fc(&format!("{p}.attn.o"))?,
                ln1: ln("ln1")?,
                ln2: ln("ln2")?,
                fc1: fc(&format!("{p}.ffn.fc1"))?,
                fc2: fc(&format!("{p}.ffn.fc2"))?,
            });
        }
        let head = if config.num_labels > 0 { Some(fc("head")?) } else { None };
        Ok(Self {
            config,
            tensors,
            blocks,
            head,
        })
    }

    /// Seeded random weights: projections uniform in `+-1/sqrt(fan_in)`,
    /// `gamma` near 1 and `beta` near 0.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, dims) in expected_tensors(&config) {
            let n: usize = dims.iter().product();
            let values: Vec<f32> = if name.ends_with(".gamma") {
                (0..n).map(|_| rng.gen_range(0.8..1.2)).collect()
            } else if name.ends_with(".beta") || name.ends_with(".bias") {
                (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
            } else {
                let a = 1.0 / (dims[1] as f32).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            tensors.insert(name, WeightTensor { dims, values });
        }
        Self::from_tensors(config, tensors)
    }

    /// Bundle whose tensors are all zero except LayerNorm `gamma = 1`.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let tensors = expected_tensors(&config)
            .into_iter()
            .map(|(name, dims)| {
                let v = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
                let values = vec![v; dims.iter().product()];
                (name, WeightTensor { dims, values })
            })
            .collect();
        Self::from_tensors(config, tensors)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fixed(&self) -> FixedPointParams {
        self.config.fixed().expect("validated at construction")
    }

    pub fn block(&self, i: usize) -> &BlockWeights {
        &self.blocks[i]
    }

    pub fn head(&self) -> Option<&FcWeights> {
        self.head.as_ref()
    }

    pub fn tensor(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, WeightTensor> {
        &self.tensors
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = BTreeMap::new();
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            entries.insert(
                name.clone(),
                TensorEntry {
                    offset: blob.len(),
                    dims: t.dims.clone(),
                    dtype: "float32".into(),
                },
            );
            for v in &t.values {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            version: PTIF_VERSION,
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + json.len() + blob.len());
        out.extend_from_slice(PTIF_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != PTIF_MAGIC {
            return Err(ModelError::BadMagic.into());
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(8..8 + len)
            .ok_or_else(|| ModelError::Manifest("manifest length exceeds file".into()))?;
        let head: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| ModelError::Manifest(e.to_string()))?;
        let version = head.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != PTIF_VERSION {
            return Err(ModelError::UnsupportedVersion(version).into());
        }
        let manifest: Manifest = serde_json::from_value(head).map_err(|e| ModelError::Manifest(e.to_string()))?;
        let blob = &bytes[8 + len..];
        let mut tensors = BTreeMap::new();
        for (name, entry) in manifest.tensors {
            if entry.dtype != "float32" {
                return Err(ModelError::Dtype { name, dtype: entry.dtype }.into());
            }
            let n: usize = entry.dims.iter().product();
            let raw = entry
                .offset
                .checked_add(4 * n)
                .and_then(|end| blob.get(entry.offset..end))
                .ok_or_else(|| ModelError::Truncated { name: name.clone() })?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(name, WeightTensor { dims: entry.dims, values });
        }
        Self::from_tensors(manifest.config, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(ModelError::Io)?;
        Ok(())
    }
}

/// Reads and validates a PTIF bundle.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let bytes = std::fs::read(path).map_err(ModelError::Io)?;
    ModelBundle::from_bytes(&bytes)
}
