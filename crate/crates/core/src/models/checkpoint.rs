//! Versioned binary checkpoints.
//!
//! Layout: magic bytes, a little-endian u32 format version, a u64 header
//! length, a JSON header (config, variant, optimizer settings, epoch, and
//! the parameter name/shape table), the raw little-endian f64 tensor blocks
//! in table order, optional Adam moment blocks, and a trailing CRC32 of
//! everything before it.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, Variant};
use crate::numerics::{Optimizer, OptimizerKind, OptimizerParams, Tensor};

const MAGIC: &[u8; 4] = b"SLMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    variant: Variant,
    optimizer: OptimizerParams,
    optimizer_step_count: u64,
    has_moments: bool,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

/// A trained model with its optimizer state and epoch counter.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Optimizer,
    pub epoch: usize,
}

fn write_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let model = &ckpt.model;
    let opt = &ckpt.optimizer;
    let has_moments = opt.kind == OptimizerKind::Adam && !opt.moments_m.is_empty();
    let header = Header {
        config: model.config.clone(),
        variant: model.variant,
        optimizer: OptimizerParams {
            kind: opt.kind,
            learning_rate: opt.learning_rate,
            lr_decay: opt.lr_decay,
        },
        optimizer_step_count: opt.step_count,
        has_moments,
        epoch: ckpt.epoch,
        tensors: model
            .params
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for p in model.params.iter() {
        write_tensor(&mut buf, &p.value);
    }
    if has_moments {
        for m in &opt.moments_m {
            write_tensor(&mut buf, m);
        }
        for v in &opt.moments_v {
            write_tensor(&mut buf, v);
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, buf)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("truncated file while reading {what}")))?;
    Ok(buf)
}

fn read_tensor(r: &mut impl Read, rows: usize, cols: usize, what: &str) -> Result<Tensor> {
    let bytes = read_exact(r, rows * cols * 8, what)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < 8 + MAGIC.len() {
        return Err(Error::Checkpoint("file too short to be a checkpoint".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().expect("4-byte crc"));
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::Checkpoint(
            "checksum mismatch: file is corrupted or truncated".into(),
        ));
    }

    let mut r = body;
    let magic = read_exact(&mut r, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version mismatch: file has {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let header_len =
        u64::from_le_bytes(read_exact(&mut r, 8, "header length")?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(&read_exact(&mut r, header_len, "header")?)?;

    let mut model = Model::new(header.config.clone(), header.variant)?;
    if model.params.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "parameter table mismatch: header lists {}, model has {}",
            header.tensors.len(),
            model.params.len()
        )));
    }
    for (i, entry) in header.tensors.iter().enumerate() {
        let p = model.params.get_mut(i);
        if p.name != entry.name || p.value.shape() != (entry.rows, entry.cols) {
            return Err(Error::Checkpoint(format!(
                "parameter {i} mismatch: file has {} ({}x{}), model expects {} ({})",
                entry.name,
                entry.rows,
                entry.cols,
                p.name,
                p.value.shape_string()
            )));
        }
        p.value = read_tensor(&mut r, entry.rows, entry.cols, &entry.name)?;
    }

    let mut opt = Optimizer::new(&header.optimizer)?;
    opt.step_count = header.optimizer_step_count;
    if header.has_moments {
        for entry in &header.tensors {
            opt.moments_m
                .push(read_tensor(&mut r, entry.rows, entry.cols, "adam m")?);
        }
        for entry in &header.tensors {
            opt.moments_v
                .push(read_tensor(&mut r, entry.rows, entry.cols, "adam v")?);
        }
    }
    if !r.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected trailing bytes",
            r.len()
        )));
    }

    Ok(Checkpoint {
        model,
        optimizer: opt,
        epoch: header.epoch,
    })
}
