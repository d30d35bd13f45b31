//! Versioned binary checkpoints.
//!
//! Layout, all little-endian: magic `CDCK`, version `u32`, param count
//! `u64`; then per parameter: name length `u32` + UTF-8 name, rank `u32`,
//! dims `u32` each, values as `f64`. The calibrated offset is stored as a
//! `meta.delta` parameter so the whole model round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::det::arch::ArchConfig;
use crate::det::model::CascadeModel;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_param(buf: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(model: &CascadeModel, path: &Path) -> Result<()> {
    let mut named = Vec::new();
    model.visit_params(&mut named);

    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&((named.len() + 1) as u64).to_le_bytes());
    for (name, tensor) in &named {
        write_param(&mut buf, name, tensor);
    }
    let delta = Tensor::from_vec(&[1], vec![model.delta])?;
    write_param(&mut buf, "meta.delta", &delta);

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(Error::io(parent))?;
        }
    }
    let mut file = fs::File::create(path).map_err(Error::io(path))?;
    file.write_all(&buf).map_err(Error::io(path))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint into a freshly constructed model of the given
/// architecture. Every parameter must be present with a matching shape.
pub fn load_checkpoint(path: &Path, arch: &ArchConfig) -> Result<CascadeModel> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(Error::io(path))?
        .read_to_end(&mut buf)
        .map_err(Error::io(path))?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u64()? as usize;
    let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad parameter name: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        params.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "trailing bytes in {}",
            path.display()
        )));
    }

    let mut model = CascadeModel::new(arch, 0)?;
    model.delta = params
        .remove("meta.delta")
        .ok_or_else(|| Error::Checkpoint("missing meta.delta".into()))?
        .data()[0];

    let mut slots = Vec::new();
    model.visit_params_mut(&mut slots);
    for (name, slot) in slots {
        let tensor = params
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if tensor.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        *slot = tensor;
    }
    if let Some((name, _)) = params.into_iter().next() {
        return Err(Error::Checkpoint(format!(
            "unexpected extra parameter {name}"
        )));
    }
    Ok(model)
}
