//! Binary checkpoint layout:
//!
//! ```text
//! "APPGENCK" | version: u32 LE | header length: u64 LE | JSON header
//! | per tensor: count u64 LE, count × f64 LE | SHA-256 of all prior bytes
//! ```
//!
//! Tensors are, in order: location table, app table, W_q, W_k, W_v and the
//! flat denoiser parameters. They are always stored as `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AblationVariant, AppGenModel, ModelConfig, TrainingMeta};
use crate::corpus::{CategoryId, TimeZone};
use crate::diffusion::{make_schedule, DenoiserParams};
use crate::encoders::{EmbeddingDomain, EmbeddingTable};
use crate::error::{Error, Result};
use crate::history::{AttentionParams, FeatureTables};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"APPGENCK";
const DIGEST_LEN: usize = 32;

/// A trained model with everything needed to use it on its own.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint<F> {
    pub model: AppGenModel<F>,
    pub meta: TrainingMeta,
    /// Canonical text of the run configuration that produced the model.
    pub config_text: String,
    pub config_hash: String,
    /// Category of each app id, for labelling generated records.
    pub categories: Vec<Option<CategoryId>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_text: String,
    config_hash: String,
    model: ModelConfig,
    variant: AblationVariant,
    scale: f64,
    timezone_offset: i32,
    location_dim: usize,
    app_dim: usize,
    meta: TrainingMeta,
    categories: Vec<Option<u32>>,
}

fn push_tensor<F: Scalar>(out: &mut Vec<u8>, values: &[F]) {
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<F: Scalar>(ckpt: &ModelCheckpoint<F>) -> Result<Vec<u8>> {
    let m = &ckpt.model;
    let header = Header {
        config_text: ckpt.config_text.clone(),
        config_hash: ckpt.config_hash.clone(),
        model: m.config.clone(),
        variant: m.variant,
        scale: m.scale.as_f64(),
        timezone_offset: m.tables.timezone.offset_secs,
        location_dim: m.tables.location.dim(),
        app_dim: m.tables.app.dim(),
        meta: ckpt.meta.clone(),
        categories: ckpt.categories.iter().map(|c| c.map(|c| c.0)).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::CorruptCheckpoint(format!("cannot encode header: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_tensor(&mut out, m.tables.location.as_flat());
    push_tensor(&mut out, m.tables.app.as_flat());
    for p in m.attention.params() {
        push_tensor(&mut out, p);
    }
    push_tensor(&mut out, m.denoiser.as_flat());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(digest.as_slice());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor<F: Scalar>(&mut self) -> Result<Vec<F>> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("tensor too large".into()))?;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint("tensor too large".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| F::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

/// Parses bytes written by [`encode_checkpoint`].
pub fn decode_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<ModelCheckpoint<F>> {
    if bytes.len() < MAGIC.len() + 4 + 8 + DIGEST_LEN {
        return Err(Error::CorruptCheckpoint(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptCheckpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch (truncated or modified file)".into()));
    }
    let mut r = Reader { buf: body, at: 12 };
    let hlen = usize::try_from(r.u64()?).map_err(|_| Error::CorruptCheckpoint("header too large".into()))?;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| Error::CorruptCheckpoint(format!("bad header: {e}")))?;

    let location = EmbeddingTable::from_flat(EmbeddingDomain::Location, header.location_dim, r.tensor()?)?;
    let app = EmbeddingTable::from_flat(EmbeddingDomain::App, header.app_dim, r.tensor()?)?;
    let tables = FeatureTables::new(location, app, TimeZone::new(header.timezone_offset)?);
    let attn_dim = header.model.attn_dim;
    let mut attention = AttentionParams::zeros(tables.point_dim(), attn_dim);
    for p in attention.params_mut() {
        let v = r.tensor()?;
        if v.len() != p.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "attention tensor has {} values, expected {}",
                v.len(),
                p.len()
            )));
        }
        *p = v;
    }
    let den_cfg = AppGenModel::denoiser_config(&header.model, &tables);
    let denoiser = DenoiserParams::from_flat(den_cfg, r.tensor()?)?;
    if r.at != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes after tensors".into()));
    }
    let schedule = make_schedule(header.model.steps, header.model.beta_start, header.model.beta_end)?;
    Ok(ModelCheckpoint {
        model: AppGenModel {
            config: header.model,
            variant: header.variant,
            tables,
            scale: F::of(header.scale),
            attention,
            denoiser,
            schedule,
        },
        meta: header.meta,
        config_text: header.config_text,
        config_hash: header.config_hash,
        categories: header.categories.into_iter().map(|c| c.map(CategoryId)).collect(),
    })
}

pub fn save_checkpoint<F: Scalar>(ckpt: &ModelCheckpoint<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; with `expected_hash`, refuses one produced by a
/// different configuration.
pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<ModelCheckpoint<F>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact {
                kind: "checkpoint",
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })?;
    let ckpt = decode_checkpoint(&bytes)?;
    if let Some(h) = expected_hash {
        if h != ckpt.config_hash {
            return Err(Error::ConfigHashMismatch {
                artifact: path.display().to_string(),
                found: ckpt.config_hash,
                expected: h.to_string(),
            });
        }
    }
    Ok(ckpt)
}
