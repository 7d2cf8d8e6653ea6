//! Binary checkpoint: 8-byte magic, little-endian `u64` header length, a JSON
//! header with the configs and tensor shapes, then every tensor as
//! little-endian `f64` in [`ModelParams::tensors`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, ModelParams, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BBRIDGE1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    /// Carried so evaluation encodes text the same way training did.
    pub train: TrainConfig,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    encoder: EncoderConfig,
    train: TrainConfig,
    bio_dim: Option<usize>,
    tensors: Vec<TensorHeader>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check_shapes(&self.encoder)?;
        let tensors = self.params.tensors();
        let header = Header {
            version: FORMAT_VERSION,
            encoder: self.encoder,
            train: self.train.clone(),
            bio_dim: self.params.mapper.as_ref().map(|m| m.in_dim()),
            tensors: tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encoding failed: {e}")))?;
        let n: usize = tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &tensors {
            for v in t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        header.encoder.validate()?;
        let mut params = ModelParams::init(&header.encoder, header.bio_dim, 0);
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        let found: Vec<(String, Vec<usize>)> = header
            .tensors
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if expected != found {
            return Err(bad("tensor list does not match the encoder config".into()));
        }
        let mut data = &bytes[16 + hlen..];
        for slot in params.tensors_mut() {
            let need = slot.len() * 8;
            if data.len() < need {
                return Err(bad("truncated tensor data".into()));
            }
            for (v, chunk) in slot.iter_mut().zip(data[..need].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[need..];
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        if !params.all_finite() {
            return Err(Error::NonFinite("checkpoint tensors".into()));
        }
        Ok(Checkpoint {
            encoder: header.encoder,
            train: header.train,
            params,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let encoder = EncoderConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            ffn: 8,
            dropout: 0.0,
            max_len: 6,
            vocab_size: 20,
        };
        Checkpoint {
            encoder,
            train: TrainConfig::default(),
            params: ModelParams::init(&encoder, Some(3), 11),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = small();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = small().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
