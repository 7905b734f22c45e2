//! JSON manifests and raw little-endian f32 payloads.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Concatenates the tensors as little-endian f32 values.
pub fn write_f32(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let n: usize = tensors.iter().map(Tensor::numel).sum();
    let mut bytes = Vec::with_capacity(4 * n);
    for t in tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads `count` tensors of `shape` written by [`write_f32`].
pub fn read_f32(path: &Path, count: usize, shape: &[usize]) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let per: usize = shape.iter().product();
    let expected = 4 * per * count;
    if bytes.len() != expected {
        return Err(Error::format(
            "payload",
            format!("{}: expected {expected} bytes, found {}", path.display(), bytes.len()),
        ));
    }
    bytes
        .chunks_exact(4 * per)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            Tensor::new(shape, data).map_err(Error::from)
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format("manifest", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_size_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        write_f32(&p, &[Tensor::vector(vec![1.0, 2.5]), Tensor::vector(vec![-3.0, 0.0])]).unwrap();
        let back = read_f32(&p, 2, &[2]).unwrap();
        assert_eq!(back[1].data(), &[-3.0, 0.0]);
        let err = read_f32(&p, 3, &[2]).unwrap_err().to_string();
        assert!(err.contains("expected 24 bytes, found 16"), "{err}");
    }
}
