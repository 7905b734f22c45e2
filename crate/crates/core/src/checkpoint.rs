//! Binary layer-file format shared by GAN checkpoints and saved surrogates.
//!
//! Little-endian throughout:
//!
//! ```text
//! "GPRI"  u32 version(=1)  u32 latent_dim  u32 layer_count
//! layer_count x { u8 kind  u8 activation  u32 dims[4] }
//! parameters as f32, layer by layer, weight then bias
//! ```
//!
//! `kind` is 0 for dense and 1 for conv2d. Conv dims are
//! `[c_out, c_in, kh, kw]`. Dense dims are `[outputs, inputs, h, w]`, where
//! `h x w` is the spatial view of the output (`1 x 1` except for a layer that
//! emits an image, which is stored with `outputs = channels * h * w`).

use std::path::Path;

use crate::nn::{Activation, LayerKind, LayerSpec};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GPRI";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const LAYER_LEN: usize = 18;

/// A layer as stored on disk, with the spatial view of its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRecord {
    pub spec: LayerSpec,
    pub view: (usize, usize),
}

impl LayerRecord {
    pub fn plain(spec: LayerSpec) -> Self {
        LayerRecord { spec, view: (1, 1) }
    }

    fn dims(&self) -> [u32; 4] {
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                [outputs as u32, inputs as u32, self.view.0 as u32, self.view.1 as u32]
            }
            LayerKind::Conv2d { c_out, c_in, kh, kw } => [c_out as u32, c_in as u32, kh as u32, kw as u32],
        }
    }

    fn param_count(&self) -> usize {
        self.spec.kind.weight_shape().iter().product::<usize>() + self.spec.kind.bias_len()
    }
}

/// Decoded contents of a layer file.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFile {
    pub latent_dim: usize,
    pub layers: Vec<LayerRecord>,
    /// Weight and bias tensors in layer order.
    pub tensors: Vec<Tensor>,
}

pub fn encode(latent_dim: usize, layers: &[LayerRecord], tensors: &[&Tensor]) -> Vec<u8> {
    assert_eq!(tensors.len(), 2 * layers.len(), "two tensors per layer");
    let n_params: usize = layers.iter().map(LayerRecord::param_count).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + LAYER_LEN * layers.len() + 4 * n_params);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(latent_dim as u32).to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.push(match l.spec.kind {
            LayerKind::Dense { .. } => 0,
            LayerKind::Conv2d { .. } => 1,
        });
        out.push(l.spec.activation.code());
        for d in l.dims() {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    for t in tensors {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn truncated(expected: usize, actual: usize) -> Error {
    Error::format(
        "checkpoint",
        format!("truncated file: expected {expected} bytes, found {actual}"),
    )
}

pub fn decode(bytes: &[u8]) -> Result<LayerFile> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format("checkpoint", "bad magic (expected \"GPRI\")"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN, bytes.len()));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let latent_dim = u32_at(bytes, 8) as usize;
    let count = u32_at(bytes, 12) as usize;
    let table_end = HEADER_LEN + LAYER_LEN * count;
    if bytes.len() < table_end {
        return Err(truncated(table_end, bytes.len()));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let at = HEADER_LEN + LAYER_LEN * i;
        let activation = Activation::from_code(bytes[at + 1]).ok_or_else(|| {
            Error::format("checkpoint", format!("layer {i}: unknown activation {}", bytes[at + 1]))
        })?;
        let d: Vec<usize> = (0..4).map(|k| u32_at(bytes, at + 2 + 4 * k) as usize).collect();
        if d.contains(&0) {
            return Err(Error::format("checkpoint", format!("layer {i}: zero dimension {d:?}")));
        }
        let record = match bytes[at] {
            0 => LayerRecord {
                spec: LayerSpec {
                    kind: LayerKind::Dense { outputs: d[0], inputs: d[1] },
                    activation,
                },
                view: (d[2], d[3]),
            },
            1 => LayerRecord::plain(LayerSpec {
                kind: LayerKind::Conv2d { c_out: d[0], c_in: d[1], kh: d[2], kw: d[3] },
                activation,
            }),
            k => return Err(Error::format("checkpoint", format!("layer {i}: unknown kind {k}"))),
        };
        layers.push(record);
    }
    let n_params: usize = layers.iter().map(LayerRecord::param_count).sum();
    let expected = table_end + 4 * n_params;
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(truncated(expected, bytes.len()));
        }
        return Err(Error::format(
            "checkpoint",
            format!("trailing data: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut at = table_end;
    let mut take = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| f64::from(f32::from_le_bytes(bytes[at + 4 * i..at + 4 * i + 4].try_into().unwrap())))
            .collect();
        at += 4 * n;
        Tensor::new(shape, data)
    };
    let mut tensors = Vec::with_capacity(2 * count);
    for l in &layers {
        tensors.push(take(&l.spec.kind.weight_shape())?);
        tensors.push(take(&[l.spec.kind.bias_len()])?);
    }
    Ok(LayerFile {
        latent_dim,
        layers,
        tensors,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Vec<LayerRecord>, Vec<Tensor>) {
        let layers = vec![
            LayerRecord::plain(LayerSpec {
                kind: LayerKind::Conv2d { c_out: 2, c_in: 1, kh: 3, kw: 3 },
                activation: Activation::Relu,
            }),
            LayerRecord {
                spec: LayerSpec {
                    kind: LayerKind::Dense { inputs: 8, outputs: 4 },
                    activation: Activation::Tanh,
                },
                view: (2, 2),
            },
        ];
        let tensors = vec![
            Tensor::new(&[2, 1, 3, 3], (0..18).map(|i| i as f64 * 0.25).collect()).unwrap(),
            Tensor::vector(vec![0.5, -0.5]),
            Tensor::new(&[4, 8], (0..32).map(|i| -(i as f64) / 8.0).collect()).unwrap(),
            Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]),
        ];
        (layers, tensors)
    }

    #[test]
    fn roundtrip_is_exact_for_f32_values() {
        let (layers, tensors) = sample();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let bytes = encode(7, &layers, &refs);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.latent_dim, 7);
        assert_eq!(back.layers, layers);
        assert_eq!(back.tensors, tensors);
    }

    #[test]
    fn header_layout() {
        let (layers, tensors) = sample();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let bytes = encode(7, &layers, &refs);
        assert_eq!(&bytes[..4], b"GPRI");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        // first layer: conv, relu, dims
        assert_eq!(bytes[16], 1);
        assert_eq!(bytes[17], 1);
        assert_eq!(&bytes[18..22], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 2 * 18 + 4 * (18 + 2 + 32 + 4));
    }

    #[test]
    fn bad_magic_rejected() {
        let err = decode(b"NOPE\x01\0\0\0").unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let (layers, tensors) = sample();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let bytes = encode(7, &layers, &refs);
        let cut = &bytes[..bytes.len() - 3];
        let err = decode(cut).unwrap_err().to_string();
        assert!(err.contains(&format!("expected {} bytes", bytes.len())), "{err}");
        assert!(err.contains(&format!("found {}", cut.len())), "{err}");
    }
}
