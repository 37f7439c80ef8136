//! Binary checkpoint format.
//!
//! ```text
//! b"S2SCKPT1" | u32 LE header length | JSON header | tensor data (LE)
//! ```
//!
//! The header records the config, the element type and every tensor's name
//! and shape in storage order. Data follows in the same order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Seq2SeqModel};
use crate::autodiff::{Scalar, Tensor};

const MAGIC: &[u8; 8] = b"S2SCKPT1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl<T: Scalar> Seq2SeqModel<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = Header {
            config: self.config.clone(),
            dtype: T::DTYPE.to_string(),
            tensors: self
                .names
                .iter()
                .zip(&self.params)
                .map(|(n, p)| TensorEntry {
                    name: n.clone(),
                    shape: p.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| bad("header too large"))?;
        let mut out = Vec::with_capacity(12 + json.len() + self.parameter_count() * T::WIDTH);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for p in &self.params {
            for &v in p.values() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(bad(format!("stored dtype {} but loading as {}", header.dtype, T::DTYPE)));
        }
        let mut model = Self::new(header.config, 0)?;
        if header.tensors.len() != model.params.len() {
            return Err(bad(format!(
                "{} tensors stored, config implies {}",
                header.tensors.len(),
                model.params.len()
            )));
        }
        let mut data = &bytes[12 + len..];
        for ((entry, name), param) in header.tensors.iter().zip(&model.names).zip(model.params.iter_mut()) {
            if &entry.name != name || entry.shape != param.shape() {
                return Err(bad(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    param.shape()
                )));
            }
            let n = param.len() * T::WIDTH;
            if data.len() < n {
                return Err(bad(format!("truncated data in {}", entry.name)));
            }
            let values: Vec<T> = data[..n].chunks_exact(T::WIDTH).map(T::read_le).collect();
            *param = Tensor::parameter(entry.shape.clone(), values)?;
            data = &data[n..];
        }
        if !data.is_empty() {
            return Err(bad(format!("{} trailing bytes", data.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
