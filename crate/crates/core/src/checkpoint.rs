//! Model checkpoints.
//!
//! A checkpoint is one JSON header line describing the architecture, followed
//! by every parameter block as little-endian `f64` in declaration order:
//! encoder layers, any-way head, semantic head, then prototype memory rows.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maml::{MetaModel, TrainMode};
use crate::nn::{LinearHead, Matrix, MlpEncoder, Parameters};
use crate::proto::PrototypeMemory;

pub const FORMAT: &str = "awmeta-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ProtoModel {
    pub encoder: MlpEncoder,
    pub memory: Option<PrototypeMemory>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Maml(MetaModel),
    Proto(ProtoModel),
}

impl Model {
    pub fn backend(&self) -> &'static str {
        match self {
            Self::Maml(_) => "maml",
            Self::Proto(_) => "protonet",
        }
    }

    pub fn encoder(&self) -> &MlpEncoder {
        match self {
            Self::Maml(m) => &m.encoder,
            Self::Proto(p) => &p.encoder,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub mode: TrainMode,
    /// Outer step the parameters were taken at.
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
struct MemoryHeader {
    classes: usize,
    dim: usize,
    ema_rate: f64,
    seen: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    backend: String,
    mode: TrainMode,
    step: usize,
    layer_dims: Vec<usize>,
    final_activation: bool,
    width: Option<usize>,
    semantic_classes: Option<usize>,
    memory: Option<MemoryHeader>,
}

fn push_blocks(out: &mut Vec<u8>, p: &impl Parameters) {
    for block in p.param_blocks() {
        for v in block {
            out.extend(v.to_le_bytes());
        }
    }
}

fn fill(blocks: Vec<&mut [f64]>, take: &mut impl FnMut(usize) -> Result<Vec<f64>>) -> Result<()> {
    for block in blocks {
        let v = take(block.len())?;
        block.copy_from_slice(&v);
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let encoder = self.model.encoder();
        let (width, semantic_classes, memory) = match &self.model {
            Model::Maml(m) => (Some(m.width()), m.semantic_classes(), None),
            Model::Proto(p) => (
                None,
                None,
                p.memory.as_ref().map(|m| MemoryHeader {
                    classes: m.classes(),
                    dim: m.dim(),
                    ema_rate: m.ema_rate(),
                    seen: m.seen().to_vec(),
                }),
            ),
        };
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            backend: self.model.backend().into(),
            mode: self.mode,
            step: self.step,
            layer_dims: encoder.layer_dims().to_vec(),
            final_activation: encoder.final_activation(),
            width,
            semantic_classes,
            memory,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        match &self.model {
            Model::Maml(m) => push_blocks(&mut out, m),
            Model::Proto(p) => {
                push_blocks(&mut out, &p.encoder);
                if let Some(mem) = &p.memory {
                    for v in mem.prototypes().data() {
                        out.extend(v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |offset: usize, detail: String| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            detail,
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fail(0, "missing header line".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| fail(0, format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(fail(
                0,
                format!("unsupported checkpoint {} v{}", header.format, header.version),
            ));
        }
        let encoder = MlpEncoder::zeros(&header.layer_dims, header.final_activation)?;
        let f = encoder.feature_dim();
        let mut model = match header.backend.as_str() {
            "maml" => {
                let width = header.width.ok_or_else(|| fail(0, "maml checkpoint without width".into()))?;
                let head = |o: usize| LinearHead::from_parts(Matrix::zeros(f, o), vec![0.0; o]);
                Model::Maml(MetaModel::from_parts(
                    encoder,
                    head(width)?,
                    header.semantic_classes.map(head).transpose()?,
                )?)
            }
            "protonet" => Model::Proto(ProtoModel { encoder, memory: None }),
            other => return Err(fail(0, format!("unknown backend {other:?}"))),
        };

        let mut pos = nl + 1;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let len = n * 8;
            if bytes.len() - pos < len {
                return Err(fail(pos, format!("truncated: need {len} bytes, {} remain", bytes.len() - pos)));
            }
            let v = bytes[pos..pos + len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos += len;
            Ok(v)
        };
        match &mut model {
            Model::Maml(m) => fill(m.param_blocks_mut(), &mut take)?,
            Model::Proto(p) => {
                fill(p.encoder.param_blocks_mut(), &mut take)?;
                if let Some(mh) = header.memory {
                    if mh.seen.len() != mh.classes {
                        return Err(fail(0, "memory seen mask length mismatch".into()));
                    }
                    let rows = Matrix::from_vec(mh.classes, mh.dim, take(mh.classes * mh.dim)?)?;
                    p.memory = Some(PrototypeMemory::from_parts(mh.ema_rate, rows, mh.seen)?);
                }
            }
        }
        if pos != bytes.len() {
            return Err(fail(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            model,
            mode: header.mode,
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
