//! The PFQM single-file model format.
//!
//! Layout, in order:
//!
//! 1. magic bytes `0x50 0x46 0x51 0x4D` (`"PFQM"`),
//! 2. format version as little-endian `u32` (currently 1),
//! 3. manifest length as little-endian `u64`,
//! 4. UTF-8 JSON manifest: embedding dimension, input shape, the layer
//!    list with shape metadata, and per-layer parameter counts,
//! 5. every parameter tensor as little-endian 32-bit floats, layer by
//!    layer in declaration order (dense: weight then bias; conv: kernel
//!    then bias; batchnorm: gamma, beta, mean, variance).
//!
//! Round-trips are bit-exact: weights are compared as raw 32-bit patterns.
//! The manifest schema is documented in `docs/formats.md` together with a
//! golden sample file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DataShape, LayerParams, LayerSpec, Model};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"PFQM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes; not a PFQM stream")]
    BadMagic,
    #[error("unsupported PFQM version {0}")]
    VersionUnsupported(u32),
    #[error("stream truncated")]
    Truncated,
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),
    #[error("trailing data after parameters")]
    TrailingData,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    d: usize,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    param_counts: Vec<usize>,
}

fn tensors_of(params: &LayerParams) -> Vec<&Tensor<f32>> {
    match params {
        LayerParams::Dense { weight, bias } => vec![weight, bias],
        LayerParams::Conv2d { kernel, bias } => vec![kernel, bias],
        LayerParams::BatchNorm {
            gamma,
            beta,
            mean,
            variance,
        } => vec![gamma, beta, mean, variance],
        LayerParams::None => Vec::new(),
    }
}

/// Serialize a model to the PFQM byte layout.
pub fn save_model(model: &Model) -> Vec<u8> {
    let manifest = Manifest {
        d: model.embedding_dim(),
        input_shape: model.input_shape().dims(),
        layers: model.layers().to_vec(),
        param_counts: model.layers().iter().map(|l| l.param_count()).collect(),
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let total_params: usize = manifest.param_counts.iter().sum();
    let mut out = Vec::with_capacity(16 + manifest_json.len() + 4 * total_params);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for params in model.params() {
        for tensor in tensors_of(params) {
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(FormatError::Truncated);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_f32_block(bytes: &mut &[u8], count: usize) -> Result<Vec<f32>, FormatError> {
    let raw = take(bytes, count * 4)?;
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Parse and validate a PFQM byte stream back into a model.
pub fn load_model(mut bytes: &[u8]) -> Result<Model, FormatError> {
    let magic = take(&mut bytes, 4)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version_bytes = take(&mut bytes, 4)?;
    let version = u32::from_le_bytes(version_bytes.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::VersionUnsupported(version));
    }
    let len_bytes = take(&mut bytes, 8)?;
    let manifest_len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let manifest_raw = take(&mut bytes, manifest_len)?;
    let manifest: Manifest = serde_json::from_slice(manifest_raw)
        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?;

    if manifest.param_counts.len() != manifest.layers.len() {
        return Err(FormatError::ManifestInvalid(format!(
            "{} layers but {} param counts",
            manifest.layers.len(),
            manifest.param_counts.len()
        )));
    }
    let input_shape = DataShape::from_dims(&manifest.input_shape)
        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?;

    let mut params = Vec::with_capacity(manifest.layers.len());
    for (layer, &count) in manifest.layers.iter().zip(&manifest.param_counts) {
        if count != layer.param_count() {
            return Err(FormatError::ManifestInvalid(format!(
                "layer {layer:?} declares {count} parameters, expected {}",
                layer.param_count()
            )));
        }
        let block = match *layer {
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                let w = read_f32_block(&mut bytes, out_features * in_features)?;
                let b = read_f32_block(&mut bytes, out_features)?;
                LayerParams::Dense {
                    weight: Tensor::new(vec![out_features, in_features], w)
                        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?,
                    bias: Tensor::vector(b)
                        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?,
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let k = read_f32_block(&mut bytes, out_channels * in_channels * kernel * kernel)?;
                let b = read_f32_block(&mut bytes, out_channels)?;
                LayerParams::Conv2d {
                    kernel: Tensor::new(vec![out_channels, in_channels, kernel, kernel], k)
                        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?,
                    bias: Tensor::vector(b)
                        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?,
                }
            }
            LayerSpec::BatchNorm { channels, .. } => {
                let mut parts = Vec::with_capacity(4);
                for _ in 0..4 {
                    let block = read_f32_block(&mut bytes, channels)?;
                    parts.push(
                        Tensor::vector(block)
                            .map_err(|e| FormatError::ManifestInvalid(e.to_string()))?,
                    );
                }
                let variance = parts.pop().unwrap();
                let mean = parts.pop().unwrap();
                let beta = parts.pop().unwrap();
                let gamma = parts.pop().unwrap();
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    variance,
                }
            }
            LayerSpec::Relu
            | LayerSpec::GlobalAvgPool
            | LayerSpec::Flatten
            | LayerSpec::L2Normalize => LayerParams::None,
        };
        params.push(block);
    }
    if !bytes.is_empty() {
        return Err(FormatError::TrailingData);
    }
    Model::new(input_shape, manifest.layers, params)
        .map_err(|e| FormatError::ManifestInvalid(e.to_string()))
}

pub fn save_model_file<P: AsRef<Path>>(path: P, model: &Model) -> Result<(), FormatError> {
    std::fs::write(path, save_model(model))?;
    Ok(())
}

pub fn load_model_file<P: AsRef<Path>>(path: P) -> Result<Model, FormatError> {
    let bytes = std::fs::read(path)?;
    load_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BATCHNORM_EPS;
    use crate::rng::Rng;

    fn sample_model() -> Model {
        let mut rng = Rng::from_seed(31);
        let mut randn = |n: usize| -> Vec<f32> {
            (0..n).map(|_| rng.standard_normal() as f32).collect()
        };
        Model::new(
            DataShape::Image {
                channels: 1,
                height: 4,
                width: 4,
            },
            vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::BatchNorm {
                    channels: 3,
                    epsilon: BATCHNORM_EPS,
                },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    in_features: 3,
                    out_features: 2,
                    embedding_head: true,
                },
                LayerSpec::L2Normalize,
            ],
            vec![
                LayerParams::Conv2d {
                    kernel: Tensor::new(vec![3, 1, 3, 3], randn(27)).unwrap(),
                    bias: Tensor::vector(randn(3)).unwrap(),
                },
                LayerParams::BatchNorm {
                    gamma: Tensor::vector(vec![1.0, 2.0, 0.5]).unwrap(),
                    beta: Tensor::vector(randn(3)).unwrap(),
                    mean: Tensor::vector(randn(3)).unwrap(),
                    variance: Tensor::vector(vec![1.0, 0.5, 2.0]).unwrap(),
                },
                LayerParams::None,
                LayerParams::None,
                LayerParams::Dense {
                    weight: Tensor::new(vec![2, 3], randn(6)).unwrap(),
                    bias: Tensor::vector(randn(2)).unwrap(),
                },
                LayerParams::None,
            ],
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = sample_model();
        let bytes = save_model(&m);
        let back = load_model(&bytes).unwrap();
        assert_eq!(m, back);
        // And stable: saving again yields identical bytes.
        assert_eq!(bytes, save_model(&back));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = save_model(&sample_model());
        bytes[0] = b'X';
        assert!(matches!(load_model(&bytes), Err(FormatError::BadMagic)));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = save_model(&sample_model());
        // Cut inside the parameter section.
        let cut = bytes.len() - 7;
        assert!(matches!(
            load_model(&bytes[..cut]),
            Err(FormatError::Truncated)
        ));
        // Cut inside the header.
        assert!(matches!(load_model(&bytes[..6]), Err(FormatError::Truncated)));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = save_model(&sample_model());
        bytes[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            load_model(&bytes),
            Err(FormatError::VersionUnsupported(99))
        ));
    }

    #[test]
    fn garbage_manifest_is_rejected() {
        let m = sample_model();
        let manifest_len = {
            let bytes = save_model(&m);
            u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize
        };
        let mut bytes = save_model(&m);
        bytes[16..16 + manifest_len].fill(b'{');
        assert!(matches!(
            load_model(&bytes),
            Err(FormatError::ManifestInvalid(_))
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = save_model(&sample_model());
        bytes.push(0);
        assert!(matches!(load_model(&bytes), Err(FormatError::TrailingData)));
    }
}
