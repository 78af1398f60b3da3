//! Binary checkpoint format for named f64 parameter tensors.
//!
//! Layout (all integers little-endian):
//! ```text
//! magic  b"XLTR"
//! version u32                      (currently 1)
//! repeat until EOF:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, extents rank x u64
//!   values   product(extents) x f64
//! ```
//! Loading restores values into an existing model by name and verifies
//! shapes, so a checkpoint written for one architecture fails loudly when
//! applied to another.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::NamedParams;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"XLTR";
const VERSION: u32 = 1;

/// Serializes the named parameters to `path`, overwriting it.
pub fn save(path: &Path, params: &NamedParams) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, tensor) in params {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &extent in shape {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        for v in tensor.to_vec() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a checkpoint and copies each record's values into the parameter
/// of the same name. Every record must match an existing parameter in both
/// name and shape, and every parameter must be covered exactly once.
pub fn load(path: &Path, params: &NamedParams) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = Cursor::new(&bytes);

    let magic = cursor.take_bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "bad magic {magic:?}, not a checkpoint file"
        )));
    }
    let version = cursor.take_u32("version")?;
    if version != VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }

    let mut restored: HashSet<&str> = HashSet::new();
    while !cursor.at_end() {
        let name_len = cursor.take_u32("record name length")? as usize;
        let name_bytes = cursor.take_bytes(name_len, "record name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CoreError::Checkpoint("record name is not UTF-8".to_string()))?;
        let rank = cursor.take_u32("record rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cursor.take_u64("record extent")? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(cursor.take_f64(name)?);
        }

        let (param_name, tensor) = params
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| {
                CoreError::Checkpoint(format!("record '{name}' has no matching parameter"))
            })?;
        if tensor.shape() != shape.as_slice() {
            return Err(CoreError::Checkpoint(format!(
                "record '{name}' has shape {:?}, parameter expects {:?}",
                shape,
                tensor.shape()
            )));
        }
        if !restored.insert(param_name) {
            return Err(CoreError::Checkpoint(format!(
                "record '{name}' appears more than once"
            )));
        }
        tensor
            .set_values(&values)
            .map_err(|e| CoreError::Checkpoint(format!("record '{name}': {e}")))?;
    }

    if restored.len() != params.len() {
        let missing: Vec<&str> = params
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| !restored.contains(n))
            .collect();
        return Err(CoreError::Checkpoint(format!(
            "checkpoint is missing parameters: {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Cursor<'a> {
        Cursor { bytes, pos: 0 }
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take_bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Checkpoint(format!(
                "truncated file while reading {what}"
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take_bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn take_u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take_bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn take_f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take_bytes(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}
