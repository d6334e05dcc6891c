//! Binary checkpoint format (little endian):
//!
//! ```text
//! "TMZDA1" | version u8 | count u32
//! count x { name_len u32 | name | dtype u8 (0 = f32) | rank u32 | dims u32* | payload f32* }
//! meta_len u32 | meta JSON {arch, main_classes, aux_classes}
//! crc32 u32 over every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelError, ModelGraph};

const MAGIC: &[u8; 6] = b"TMZDA1";
const VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    arch: ArchConfig,
    main_classes: usize,
    aux_classes: usize,
}

pub fn write_checkpoint(model: &ModelGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(0);
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = Meta {
        arch: model.arch().clone(),
        main_classes: model.classes(crate::TaskRole::Main),
        aux_classes: model.classes(crate::TaskRole::Aux),
    };
    let json = serde_json::to_vec(&meta).expect("meta serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                ModelError::CorruptCheckpoint(format!("truncated at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }
}

/// Parses a checkpoint, rebuilding the graph from the embedded architecture
/// and checking that every parameter name and shape matches it.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelGraph, ModelError> {
    let corrupt = |m: String| ModelError::CorruptCheckpoint(m);
    if bytes.len() < MAGIC.len() + 1 + 4 + 4 {
        return Err(corrupt("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| corrupt("parameter name is not utf-8".into()))?
            .to_owned();
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(corrupt(format!("unknown dtype {dtype} for {name}")));
        }
        let rank = r.u32()?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()?);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| corrupt("oversized tensor".into()))?,
        )?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, data));
    }
    let meta_len = r.u32()?;
    let meta: Meta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| corrupt(format!("metadata: {e}")))?;
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes".into()));
    }
    let mut model = ModelGraph::build(&meta.arch, meta.main_classes, meta.aux_classes, 0)?;
    if model.params().len() != tensors.len() {
        return Err(corrupt(format!(
            "expected {} parameters, found {}",
            model.params().len(),
            tensors.len()
        )));
    }
    let params = model.params_mut();
    for (i, (name, shape, data)) in tensors.into_iter().enumerate() {
        let p = params.get_mut(super::ParamId(i));
        if p.name != name || p.shape != shape {
            return Err(corrupt(format!(
                "parameter {i}: expected {} {:?}, found {name} {shape:?}",
                p.name, p.shape
            )));
        }
        p.data = data;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<(), ModelError> {
    crate::fsutil::atomic_write(path, &write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph, ModelError> {
    read_checkpoint(&std::fs::read(path)?)
}
