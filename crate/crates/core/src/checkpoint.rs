//! Trained model container and its binary checkpoint format.
//!
//! Layout (little-endian): magic `TAENCKPT`, `u32` version, `u32` header
//! length, JSON header, then each tensor in header order as `u32` name
//! length, name bytes, `u32` rank, `u32` per dimension, `f32` payload.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embednet::{self, Layer, MlpParams, Trajectory};
use crate::error::{Result, TaenError};
use crate::features::{pool_blocks, VideoFeatures};
use crate::linalg::Matrix;
use crate::loss::LossWeights;
use crate::prototypes::PrototypeBank;
use crate::trainer::TrainConfig;

pub const CKPT_MAGIC: &[u8; 8] = b"TAENCKPT";
pub const CKPT_VERSION: u32 = 1;

/// Embedding network plus the prototype bank it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: MlpParams,
    pub bank: PrototypeBank,
    pub class_names: Vec<String>,
    pub weights: LossWeights,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

impl Model {
    pub fn subactions(&self) -> usize {
        self.bank.subactions()
    }

    pub fn embed_dim(&self) -> usize {
        self.params.output_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Pool into the model's sub-action count and embed.
    pub fn embed(&self, vf: &VideoFeatures) -> Result<Trajectory> {
        let pooled = pool_blocks(vf, self.subactions());
        embednet::embed(&self.params, &pooled)
    }

    pub fn embed_all(&self, videos: &[VideoFeatures]) -> Result<Vec<Trajectory>> {
        videos.par_iter().map(|v| self.embed(v)).collect()
    }

    /// Round every parameter to the nearest `f32`, i.e. to exactly what a
    /// checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for layer in self.params.layers_mut() {
            round_slice(layer.weights.as_mut_slice());
            round_slice(&mut layer.biases);
        }
        round_slice(self.bank.raw_mut().as_mut_slice());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (i, l) in self.params.layers().iter().enumerate() {
            tensors.push((
                format!("mlp.{i}.weight"),
                vec![l.weights.rows(), l.weights.cols()],
                l.weights.as_slice(),
            ));
            tensors.push((format!("mlp.{i}.bias"), vec![l.biases.len()], &l.biases));
        }
        tensors.push((
            "prototypes.raw".into(),
            vec![self.bank.classes(), self.bank.subactions(), self.bank.dim()],
            self.bank.raw().as_slice(),
        ));
        let header = CheckpointHeader {
            dims: self.params.dims(),
            a: self.subactions(),
            e: self.embed_dim(),
            classes: self.bank.classes(),
            class_names: self.class_names.clone(),
            weights: self.weights,
            seed: self.seed,
            config: self.config.clone(),
            tensors: tensors.iter().map(|t| t.0.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for (name, dims, data) in tensors {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in &dims {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in data {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CKPT_MAGIC {
            return Err(TaenError::BadMagic { expected: "TAENCKPT" });
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(TaenError::UnsupportedVersion {
                found: version,
                expected: CKPT_VERSION,
            });
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        if header.dims.len() < 2 || header.dims.last() != Some(&header.e) {
            return Err(TaenError::MalformedHeader {
                offset: 16,
                reason: format!("dims {:?} inconsistent with e={}", header.dims, header.e),
            });
        }
        let n_layers = header.dims.len() - 1;
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        for i in 0..n_layers {
            let (inp, out) = (header.dims[i], header.dims[i + 1]);
            expected.push((format!("mlp.{i}.weight"), vec![out, inp]));
            expected.push((format!("mlp.{i}.bias"), vec![out]));
        }
        expected.push((
            "prototypes.raw".into(),
            vec![header.classes, header.a, header.e],
        ));
        if header.tensors != expected.iter().map(|t| t.0.clone()).collect::<Vec<_>>() {
            return Err(TaenError::MalformedHeader {
                offset: 16,
                reason: format!("unexpected tensor list {:?}", header.tensors),
            });
        }
        let mut blobs = Vec::with_capacity(expected.len());
        for (name, dims) in &expected {
            let offset = r.pos;
            let nlen = r.u32()? as usize;
            let found = r.take(nlen)?;
            if found != name.as_bytes() {
                return Err(TaenError::MalformedHeader {
                    offset,
                    reason: format!(
                        "expected tensor {name}, found {}",
                        String::from_utf8_lossy(found)
                    ),
                });
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &shape != dims {
                return Err(TaenError::MalformedHeader {
                    offset,
                    reason: format!("tensor {name} has shape {shape:?}, expected {dims:?}"),
                });
            }
            let count: usize = shape.iter().product();
            let payload = r.take(count * 4)?;
            let data: Vec<f64> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            blobs.push(data);
        }
        if r.pos != bytes.len() {
            return Err(TaenError::TrailingBytes {
                offset: r.pos,
                trailing: bytes.len() - r.pos,
            });
        }
        let raw = blobs.pop().unwrap();
        let mut layers = Vec::with_capacity(n_layers);
        let mut it = blobs.into_iter();
        for i in 0..n_layers {
            let (inp, out) = (header.dims[i], header.dims[i + 1]);
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            layers.push(Layer {
                weights: Matrix::from_vec(out, inp, w)?,
                biases: b,
            });
        }
        Ok(Model {
            params: MlpParams::from_layers(layers)?,
            bank: PrototypeBank::from_raw(header.classes, header.a, header.e, raw)?,
            class_names: header.class_names,
            weights: header.weights,
            seed: header.seed,
            config: header.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| TaenError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| TaenError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn round_slice(xs: &mut [f64]) {
    xs.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    dims: Vec<usize>,
    a: usize,
    e: usize,
    classes: usize,
    class_names: Vec<String>,
    weights: LossWeights,
    seed: u64,
    config: Option<TrainConfig>,
    tensors: Vec<String>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(TaenError::MalformedHeader {
                offset: self.pos,
                reason: format!(
                    "need {n} bytes, {} remain",
                    self.bytes.len().saturating_sub(self.pos)
                ),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embednet::init_params;
    use crate::prototypes::init_prototypes;

    fn model() -> Model {
        let mut m = Model {
            params: init_params(&[6, 4, 4, 3], 1).unwrap(),
            bank: init_prototypes(3, 2, 3, 2).unwrap(),
            class_names: vec!["a".into(), "b".into(), "c".into()],
            weights: LossWeights::default(),
            seed: 11,
            config: None,
        };
        m.round_to_f32();
        m
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let m = model();
        let bytes = m.to_bytes().unwrap();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.params.layers(), m.params.layers());
        assert_eq!(back.bank, m.bank);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_rejected() {
        let bytes = model().to_bytes().unwrap();
        assert!(matches!(
            Model::from_bytes(&bytes[..bytes.len() - 2]),
            Err(TaenError::MalformedHeader { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Model::from_bytes(&bad), Err(TaenError::BadMagic { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Model::from_bytes(&long), Err(TaenError::TrailingBytes { .. })));
    }
}
