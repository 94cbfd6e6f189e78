//! Binary model artifacts.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    8 bytes  "RAPGNNMA"
//! version  u32
//! header   u32 length + JSON (config, embedding kind, in/out widths)
//! digest   32 bytes SHA-256 of the header JSON
//! count    u32
//! tensors  count × (u32 name length, name, u64 rows, u64 cols, f64 values)
//! ```
//!
//! Weights drawn once at construction are not stored; they are redrawn
//! from the configured seed when the model is rebuilt.

use std::fs;
use std::path::{Path, PathBuf};

use rapgnn_core::matrix::DenseMatrix;
use rapgnn_core::model::{EmbeddingKind, Model, ModelConfig};
use rapgnn_core::params::ParamSet;
use rapgnn_core::train::PretrainedEmbedding;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"RAPGNNMA";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a model artifact")]
    BadMagic,
    #[error("unsupported artifact version {0}")]
    Version(u32),
    #[error("artifact truncated at byte {0}")]
    Truncated(usize),
    #[error("header digest does not match its contents")]
    Digest,
    #[error("header: {0}")]
    Header(String),
    #[error("tensor `{0}`: {1}")]
    Tensor(String, String),
    #[error(transparent)]
    Model(#[from] rapgnn_core::Error),
}

pub type Result<T, E = ArtifactError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    embedding: EmbeddingKind,
    in_dim: usize,
    out_dim: usize,
}

/// Everything needed to rebuild a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub config: ModelConfig,
    /// Embedding architecture actually in use (differs from the config
    /// for loaded embeddings).
    pub embedding: EmbeddingKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub params: ParamSet,
}

/// Hex SHA-256 of the config's JSON form.
pub fn config_digest(config: &ModelConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex(&Sha256::digest(json))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(ArtifactError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl ModelArtifact {
    pub fn from_model(model: &Model) -> Self {
        Self {
            config: model.config.clone(),
            embedding: model.embedding_kind(),
            in_dim: model.in_dim(),
            out_dim: model.out_dim(),
            params: model.params.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            embedding: self.embedding.clone(),
            in_dim: self.in_dim,
            out_dim: self.out_dim,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&Sha256::digest(&json));
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, value) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(value.cols() as u64).to_le_bytes());
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).map_err(|_| ArtifactError::BadMagic)? != MAGIC {
            return Err(ArtifactError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ArtifactError::Version(version));
        }
        let len = r.u32()? as usize;
        let json = r.take(len)?;
        if r.take(32)? != Sha256::digest(json).as_slice() {
            return Err(ArtifactError::Digest);
        }
        let header: Header = serde_json::from_slice(json).map_err(|e| ArtifactError::Header(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| ArtifactError::Header(format!("tensor name: {}", e)))?
                .to_string();
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or(ArtifactError::Truncated(r.pos))?;
            let raw = r.take(n.checked_mul(8).ok_or(ArtifactError::Truncated(r.pos))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            if params.find(&name).is_some() {
                return Err(ArtifactError::Tensor(name, "stored twice".into()));
            }
            params.add(name, DenseMatrix::from_vec(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(ArtifactError::Header(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config: header.config,
            embedding: header.embedding,
            in_dim: header.in_dim,
            out_dim: header.out_dim,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|source| ArtifactError::Io { path: path.into(), source })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| ArtifactError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model and checks that stored and expected tensors agree
    /// in name and shape.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), self.in_dim, self.out_dim)?;
        if matches!(self.config.embedding, EmbeddingKind::Pretrained(_)) {
            model.load_embedding(&self.embedding, &self.params)?;
        }
        if model.params.len() != self.params.len() {
            return Err(ArtifactError::Tensor(
                "*".into(),
                format!("model has {} tensors, artifact {}", model.params.len(), self.params.len()),
            ));
        }
        for (_, name, value) in self.params.iter() {
            let id = model
                .params
                .find(name)
                .ok_or_else(|| ArtifactError::Tensor(name.into(), "not part of this model".into()))?;
            let own = model.params.get_mut(id);
            if own.shape() != value.shape() {
                return Err(ArtifactError::Tensor(
                    name.into(),
                    format!("stored {:?}, model expects {:?}", value.shape(), own.shape()),
                ));
            }
            *own = value.clone();
        }
        Ok(model)
    }

    /// The embedding tensors, for plugging into a new model.
    pub fn pretrained_embedding(&self) -> Result<PretrainedEmbedding> {
        let kind = match &self.embedding {
            EmbeddingKind::Learnable(k) => EmbeddingKind::Mlp(*k),
            k if k.needs_pretraining() => k.clone(),
            other => {
                return Err(ArtifactError::Header(format!("artifact embedding `{}` has no trained tensors", other)));
            }
        };
        let mut params = ParamSet::new();
        for (_, name, value) in self.params.iter() {
            if name.starts_with("embed.") {
                params.add(name, value.clone());
            }
        }
        Ok(PretrainedEmbedding { kind, params })
    }
}
