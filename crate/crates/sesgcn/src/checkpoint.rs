//! Binary parameter checkpoints with a JSON sidecar.
//!
//! The binary file is the magic `SESG`, a little-endian `u32` format version,
//! then one record per tensor until end of file: `u32` name length, the UTF-8
//! name, `u32` rank, one `u64` per axis and the `f64` payload. Every integer
//! and float is little-endian. Buffers such as batch-norm running statistics
//! are stored alongside the learnable tensors.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sesgcn_core::model::{ModelConfig, SesGcnModel, Variant};
use sesgcn_core::numerics::Tensor;

use crate::error::{AppError, AppResult};
use crate::masks::MaskFile;

pub const MAGIC: &[u8; 4] = b"SESG";
pub const FORMAT_VERSION: u32 = 1;

/// Writes named tensors in the binary checkpoint layout.
pub fn write_tensors<'a, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u32::try_from(name.len()).map_err(std::io::Error::other)?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for x in t.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
    record: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> AppResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(AppError::parse(
                self.path,
                self.record,
                format!("truncated {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> AppResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> AppResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a binary checkpoint. Parse errors report the 1-based record index
/// in place of a line number.
pub fn read_tensors(bytes: &[u8], path: &Path) -> AppResult<Vec<(String, Tensor)>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
        record: 0,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(AppError::parse(path, 0, "not a checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(AppError::Schema(format!(
            "{}: checkpoint format version {version}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        c.record += 1;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|e| AppError::parse(path, c.record, format!("name is not UTF-8: {e}")))?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64("axis length")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| AppError::parse(path, c.record, format!("implausible shape {shape:?}")))?;
        let data: Vec<f64> = c
            .take(n * 8, "payload")?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| AppError::parse(path, c.record, format!("tensor `{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Model metadata stored next to the binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub variant: Variant,
    pub config: ModelConfig,
    /// Content hash of the stored parameters.
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<MaskFile>,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

/// Writes `path` and its `.json` sidecar.
pub fn save_model(model: &SesGcnModel, path: &Path) -> AppResult<()> {
    let mut bytes = Vec::new();
    write_tensors(
        &mut bytes,
        model.store().entries().iter().map(|e| (e.name.as_str(), &e.tensor.value)),
    )
    .map_err(|e| AppError::io(path, e))?;
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))?;
    let sidecar = Sidecar {
        variant: model.config().variant,
        config: model.config().clone(),
        fingerprint: model.fingerprint(),
        masks: model.masks().map(MaskFile::from_masks),
    };
    crate::write_json(&sidecar_path(path), &sidecar)
}

/// Rebuilds a model from `path` and its sidecar, checking that every tensor
/// is present exactly once and that the content hash matches.
pub fn load_model(path: &Path) -> AppResult<SesGcnModel> {
    let side_path = sidecar_path(path);
    let sidecar: Sidecar = crate::read_json(&side_path)?;
    if sidecar.variant != sidecar.config.variant {
        return Err(AppError::Schema(format!(
            "{}: variant `{}` disagrees with config variant `{}`",
            side_path.display(),
            sidecar.variant.name(),
            sidecar.config.variant.name()
        )));
    }
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::io(path, e))?;
    let records = read_tensors(&bytes, path)?;
    let mut model = SesGcnModel::new(sidecar.config.clone(), 0)?;
    let expected = model.store().entries().len();
    let mut seen = std::collections::BTreeSet::new();
    for (name, t) in records {
        if !seen.insert(name.clone()) {
            return Err(AppError::Schema(format!("{}: tensor `{name}` stored twice", path.display())));
        }
        model.store_mut().load(&name, t)?;
    }
    if seen.len() != expected {
        return Err(AppError::Schema(format!(
            "{}: {} of {expected} tensors stored",
            path.display(),
            seen.len()
        )));
    }
    if let Some(m) = &sidecar.masks {
        model.set_masks(m.to_masks(&side_path)?)?;
    }
    if model.fingerprint() != sidecar.fingerprint {
        return Err(AppError::Schema(format!(
            "{}: parameters do not match the sidecar fingerprint",
            path.display()
        )));
    }
    Ok(model)
}
