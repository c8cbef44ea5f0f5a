//! Binary checkpoints: `"BTSF"`, u32 version, u64 header length, JSON
//! header, then every tensor as little-endian f32 in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DensityModel, FieldConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BTSF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on the JSON header, to reject corrupt length fields early.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub field: FieldConfig,
    /// Model parameters first, then `extra` tensors.
    pub tensors: Vec<TensorEntry>,
    /// Number of leading entries that are model parameters.
    pub model_tensors: usize,
    /// Free-form metadata (training config, step, optimizer counters).
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// A model plus auxiliary named tensors (e.g. optimizer moments).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DensityModel<f32>,
    pub extra: Vec<(String, Tensor<f32>)>,
    pub meta: serde_json::Value,
}

pub fn write_checkpoint(
    out: &mut impl Write,
    model: &DensityModel<f32>,
    extra: &[(String, Tensor<f32>)],
    meta: &serde_json::Value,
) -> Result<()> {
    let mut tensors: Vec<TensorEntry> = model
        .param_names()
        .iter()
        .zip(model.params())
        .map(|(n, t)| TensorEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    tensors.extend(extra.iter().map(|(n, t)| TensorEntry {
        name: n.clone(),
        shape: t.shape().to_vec(),
    }));
    let header = CheckpointHeader {
        field: model.config().clone(),
        tensors,
        model_tensors: model.params().len(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(&CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for t in model.params().iter().chain(extra.iter().map(|(_, t)| t)) {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let mut b4 = [0u8; 4];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    if len > MAX_HEADER {
        return Err(Error::MalformedCheckpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.model_tensors > header.tensors.len() {
        return Err(Error::MalformedCheckpoint("model tensor count exceeds tensor list".into()));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::MalformedCheckpoint(format!("data for tensor {} is truncated", e.name)))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.push(Tensor::new(&e.shape, data));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::MalformedCheckpoint("trailing bytes after tensor data".into()));
    }
    let extra_tensors = tensors.split_off(header.model_tensors);
    let model = DensityModel::from_parts(header.field.clone(), tensors)
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    for (name, expected) in model.param_names().iter().zip(&header.tensors) {
        if *name != expected.name {
            return Err(Error::MalformedCheckpoint(format!(
                "parameter {} found where {name} was expected",
                expected.name
            )));
        }
    }
    let extra = header.tensors[header.model_tensors..]
        .iter()
        .map(|e| e.name.clone())
        .zip(extra_tensors)
        .collect();
    Ok(Checkpoint {
        model,
        extra,
        meta: header.meta,
    })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &DensityModel<f32>,
    extra: &[(String, Tensor<f32>)],
    meta: &serde_json::Value,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut out, model, extra, meta)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut input = BufReader::new(File::open(path)?);
    read_checkpoint(&mut input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ExtractorMode;

    fn model() -> DensityModel<f32> {
        DensityModel::new(FieldConfig::new(ExtractorMode::Conv, 8, 16, 8), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let extra = vec![("adam.m.0".to_string(), Tensor::new(&[2], vec![1.5f32, -0.0]))];
        let meta = serde_json::json!({"step": 7});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, &extra, &meta).unwrap();
        let ck = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.model.params(), m.params());
        assert_eq!(ck.model.config(), m.config());
        assert_eq!(ck.extra[0].1.data()[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(ck.meta, meta);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &ck.model, &ck.extra, &ck.meta).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model(), &[], &serde_json::Value::Null).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::BadMagic(_))));
    }

    #[test]
    fn version_mismatch_names_versions() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model(), &[], &serde_json::Value::Null).unwrap();
        buf[4..8].copy_from_slice(&9u32.to_le_bytes());
        let err = read_checkpoint(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { found: 9, expected: 1 }));
        assert!(err.to_string().contains('9') && err.to_string().contains('1'));
    }

    #[test]
    fn truncation_is_detected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model(), &[], &serde_json::Value::Null).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(&mut buf.as_slice()), Err(Error::MalformedCheckpoint(_))));
    }
}
