//! Raw little-endian `f32` array files and the manifest entries that
//! describe them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where an array lives on disk and its row-major shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub file: String,
    pub shape: Vec<usize>,
}

impl ArrayEntry {
    pub fn for_role(role: &str, shape: Vec<usize>) -> Self {
        Self {
            file: format!("{role}.f32"),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Round a value through `f32`, the precision of every file on disk.
pub fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

pub fn quantize_in_place(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = quantize(*v));
}

pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read `entry` relative to `dir`, checking the byte count against the
/// declared shape.
pub fn read_f32(dir: &Path, role: &str, entry: &ArrayEntry) -> Result<Vec<f64>> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.len() * 4;
    if bytes.len() != expected {
        return Err(Error::Format {
            role: role.to_string(),
            detail: format!(
                "{} holds {} bytes, shape {:?} needs {expected}",
                entry.file,
                bytes.len(),
                entry.shape
            ),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format {
            role: role.to_string(),
            detail: format!("non-finite value at flat index {pos}"),
        });
    }
    Ok(values)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_file_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let entry = ArrayEntry::for_role("x", vec![2, 2]);
        write_f32(&dir.path().join(&entry.file), &[1.0, 2.0, 3.0]).unwrap();
        match read_f32(dir.path(), "x", &entry) {
            Err(Error::Format { role, .. }) => assert_eq!(role, "x"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn values_survive_when_already_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let entry = ArrayEntry::for_role("y", vec![3]);
        let mut v = vec![0.1, -2.5e-3, 1234.5678];
        quantize_in_place(&mut v);
        write_f32(&dir.path().join(&entry.file), &v).unwrap();
        assert_eq!(read_f32(dir.path(), "y", &entry).unwrap(), v);
    }
}
