//! Self-describing binary archives for models and datasets.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic "PITONAR1"
//! bytes 8..12   format version, u32 little-endian
//! bytes 12..20  manifest length in bytes, u64 little-endian
//! manifest      JSON: kind, metadata, entry table (name/shape/offset)
//! payload       raw IEEE-754 doubles, little-endian
//! ```
//!
//! Offsets in the entry table are byte offsets into the payload. Round
//! trips are bit-exact: save -> load -> save produces identical files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::deeponet::{DeepONetModel, InputScale, ModelMeta, ModelSpec};
use crate::error::{Error, Result};
use crate::lora::LoraRanks;
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"PITONAR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EntryDesc {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Number of doubles.
    count: u64,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: String,
    meta: serde_json::Value,
    entries: Vec<EntryDesc>,
}

/// One named tensor inside an archive.
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

/// Serialize entries and typed metadata into the container format.
pub fn write_archive<M: Serialize>(
    path: &Path,
    kind: &str,
    meta: &M,
    entries: &[ArchiveEntry],
) -> Result<()> {
    let mut descs = Vec::with_capacity(entries.len());
    let mut offset = 0u64;
    for e in entries {
        descs.push(EntryDesc {
            name: e.name.clone(),
            shape: e.shape.clone(),
            offset,
            count: e.data.len() as u64,
            trainable: e.trainable,
        });
        offset += 8 * e.data.len() as u64;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        meta: serde_json::to_value(meta)?,
        entries: descs,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut out =
        Vec::with_capacity(20 + manifest_bytes.len() + entries.iter().map(|e| 8 * e.data.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for e in entries {
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read back an archive of the expected kind.
pub fn read_archive<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, Vec<ArchiveEntry>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 || &bytes[0..8] != MAGIC {
        return Err(Error::CorruptCheckpoint(format!(
            "{}: bad magic or truncated header",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let payload_start = 20 + manifest_len;
    if bytes.len() < payload_start {
        return Err(Error::CorruptCheckpoint(format!(
            "{}: manifest extends past end of file",
            path.display()
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[20..payload_start])?;
    if manifest.kind != kind {
        return Err(Error::CorruptCheckpoint(format!(
            "{}: kind `{}`, expected `{kind}`",
            path.display(),
            manifest.kind
        )));
    }
    let payload = &bytes[payload_start..];
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for d in &manifest.entries {
        let start = d.offset as usize;
        let end = start + 8 * d.count as usize;
        if end > payload.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{}: entry `{}` extends past payload ({} > {})",
                path.display(),
                d.name,
                end,
                payload.len()
            )));
        }
        let expect: usize = d.shape.iter().product();
        if expect != d.count as usize {
            return Err(Error::CorruptCheckpoint(format!(
                "{}: entry `{}` shape {:?} disagrees with count {}",
                path.display(),
                d.name,
                d.shape,
                d.count
            )));
        }
        let data: Vec<f64> = payload[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        entries.push(ArchiveEntry {
            name: d.name.clone(),
            shape: d.shape.clone(),
            data,
            trainable: d.trainable,
        });
    }
    let meta: M = serde_json::from_value(manifest.meta)?;
    Ok((meta, entries))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelArchiveMeta {
    spec: ModelSpec,
    trunk_scale: InputScale,
    lora: Option<LoraRanks>,
    meta: ModelMeta,
}

/// Persist a model; bit-exact round trip with [`load_model`].
pub fn save_model(model: &DeepONetModel, path: &Path) -> Result<()> {
    let entries: Vec<ArchiveEntry> = model
        .params
        .iter()
        .map(|p| ArchiveEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            data: p.value.data().to_vec(),
            trainable: p.trainable,
        })
        .collect();
    let meta = ModelArchiveMeta {
        spec: model.spec.clone(),
        trunk_scale: model.trunk_scale.clone(),
        lora: model.lora.clone(),
        meta: model.meta.clone(),
    };
    write_archive(path, "model", &meta, &entries)
}

pub fn load_model(path: &Path) -> Result<DeepONetModel> {
    let (meta, entries): (ModelArchiveMeta, _) = read_archive(path, "model")?;
    let mut params = ParamSet::new();
    for e in entries {
        params.insert(e.name, Tensor::from_vec(e.shape, e.data)?, e.trainable)?;
    }
    Ok(DeepONetModel {
        spec: meta.spec,
        trunk_scale: meta.trunk_scale,
        params,
        lora: meta.lora,
        meta: meta.meta,
    })
}
