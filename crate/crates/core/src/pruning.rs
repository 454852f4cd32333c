//! Mask construction and model sparsification.
//!
//! Three strategies are implemented over a model's flat parameter view:
//! global unstructured L1-magnitude pruning, unstructured random pruning,
//! and structured output-channel pruning on sequential chains. Unstructured
//! masks are count-driven: exactly `round(rho * N)` parameters are zeroed,
//! with ties on magnitude broken by ascending flat index, and the threshold
//! recorded as metadata rather than used for selection. Structured pruning
//! removes `floor(rho * C_out)` output channels per prunable layer (the
//! embedding head is exempt), ranked by the L1 norm of each channel's
//! weights plus its bias, and shrinks downstream consumers to match.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DataShape, LayerParams, LayerSpec, Model, ModelError};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("sparsity ratio {0} outside the open interval (0, 1)")]
    RhoOutOfRange(f64),
    #[error("mask length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unsupported topology for structured pruning: {0}")]
    UnsupportedTopology(String),
    #[error("invalid structured plan: {0}")]
    PlanInvalid(String),
    #[error("invalid mask: {0}")]
    MaskInvalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("mask file: {0}")]
    MaskFileInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    L1Magnitude,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Unstructured,
    Structured,
}

/// Number of parameters to zero for ratio `rho` over `n` parameters:
/// `round(rho * n)`, half away from zero.
pub fn prune_count(rho: f64, n: usize) -> usize {
    (rho * n as f64).round() as usize
}

/// Binary keep-mask over the flat parameter view, with provenance.
///
/// `bits[i] == true` keeps parameter `i`; exactly `prune_count(rho, n)`
/// entries are false.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    bits: Vec<bool>,
    rho: f64,
    criterion: Criterion,
    granularity: Granularity,
    seed: Option<u64>,
    tau: Option<f32>,
}

impl PruneMask {
    /// Assemble a mask from raw parts, enforcing the exact-count invariant.
    pub fn from_parts(
        bits: Vec<bool>,
        rho: f64,
        criterion: Criterion,
        granularity: Granularity,
        seed: Option<u64>,
        tau: Option<f32>,
    ) -> Result<Self, PruneError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(PruneError::RhoOutOfRange(rho));
        }
        let zeros = bits.iter().filter(|&&b| !b).count();
        let expected = prune_count(rho, bits.len());
        if zeros != expected {
            return Err(PruneError::MaskInvalid(format!(
                "{zeros} zero bits, but rho {rho} over {} parameters requires {expected}",
                bits.len()
            )));
        }
        Ok(PruneMask {
            bits,
            rho,
            criterion,
            granularity,
            seed,
            tau,
        })
    }

    /// All-keep mask (no parameter pruned); uses a vanishing ratio so the
    /// count invariant holds with zero removals.
    pub fn identity(n: usize) -> Self {
        PruneMask {
            bits: vec![true; n],
            rho: 1e-12,
            criterion: Criterion::L1Magnitude,
            granularity: Granularity::Unstructured,
            seed: None,
            tau: None,
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_zeros(&self) -> usize {
        self.bits.iter().filter(|&&b| !b).count()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.len() - self.count_zeros()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Largest pruned magnitude under the L1 criterion, recorded for
    /// provenance only.
    pub fn tau(&self) -> Option<f32> {
        self.tau
    }
}

/// Achieved sparsity: zeroed fraction of the mask.
pub fn sparsity(mask: &PruneMask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.count_zeros() as f64 / mask.len() as f64
}

/// Zero the `round(rho * N)` smallest-magnitude parameters across all
/// prunable layers at once.
pub fn build_mask_l1_global(model: &Model, rho: f64) -> Result<PruneMask, PruneError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(PruneError::RhoOutOfRange(rho));
    }
    let view = model.param_vector_view();
    let n = view.len();
    let k = prune_count(rho, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        let ma = view.values()[a].abs();
        let mb = view.values()[b].abs();
        ma.partial_cmp(&mb).unwrap().then(a.cmp(&b))
    });
    let mut bits = vec![true; n];
    for &i in &order[..k] {
        bits[i] = false;
    }
    let tau = if k > 0 {
        Some(view.values()[order[k - 1]].abs())
    } else {
        None
    };
    Ok(PruneMask {
        bits,
        rho,
        criterion: Criterion::L1Magnitude,
        granularity: Granularity::Unstructured,
        seed: None,
        tau,
    })
}

/// Zero `round(rho * N)` parameters drawn without replacement via a seeded
/// partial Fisher-Yates shuffle.
pub fn build_mask_random(model: &Model, rho: f64, seed: u64) -> Result<PruneMask, PruneError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(PruneError::RhoOutOfRange(rho));
    }
    let n = model.num_prunable_params();
    let k = prune_count(rho, n);
    let mut rng = Rng::from_seed(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below((n - i) as u64) as usize;
        indices.swap(i, j);
    }
    let mut bits = vec![true; n];
    for &i in &indices[..k] {
        bits[i] = false;
    }
    Ok(PruneMask {
        bits,
        rho,
        criterion: Criterion::Random,
        granularity: Granularity::Unstructured,
        seed: Some(seed),
        tau: None,
    })
}

/// Output channels removed from one prunable layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRemoval {
    pub layer_index: usize,
    /// Original channel indices, strictly increasing.
    pub removed_channels: Vec<usize>,
}

/// A structured pruning plan: which output channels each prunable layer
/// loses, plus the reduced layer specs after propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredPlan {
    pub rho: f64,
    pub removals: Vec<LayerRemoval>,
    pub reduced_layers: Vec<LayerSpec>,
}

impl StructuredPlan {
    pub fn is_noop(&self) -> bool {
        self.removals.is_empty()
    }
}

/// L1 importance of each output channel: norm of its weight slice plus the
/// magnitude of its bias.
fn channel_importances(params: &LayerParams) -> Vec<f64> {
    let (weight, bias, c_out) = match params {
        LayerParams::Dense { weight, bias } => (weight, bias, weight.shape()[0]),
        LayerParams::Conv2d { kernel, bias } => (kernel, bias, kernel.shape()[0]),
        _ => return Vec::new(),
    };
    let per_channel = weight.len() / c_out;
    (0..c_out)
        .map(|c| {
            let mut acc = 0.0f64;
            for v in &weight.data()[c * per_channel..(c + 1) * per_channel] {
                acc += (*v as f64).abs();
            }
            acc + (bias.data()[c] as f64).abs()
        })
        .collect()
}

/// Rank channels of every prunable, non-embedding-head layer and select
/// `floor(rho * C_out)` per layer for removal.
pub fn build_structured_plan(model: &Model, rho: f64) -> Result<StructuredPlan, PruneError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(PruneError::RhoOutOfRange(rho));
    }
    let mut removals = Vec::new();
    for (i, (layer, params)) in model.layers().iter().zip(model.params()).enumerate() {
        if !layer.is_prunable() || layer.is_embedding_head() {
            continue;
        }
        let importances = channel_importances(params);
        let c_out = importances.len();
        let remove = (rho * c_out as f64).floor() as usize;
        if remove == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..c_out).collect();
        order.sort_unstable_by(|&a, &b| {
            importances[a]
                .partial_cmp(&importances[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut removed: Vec<usize> = order[..remove].to_vec();
        removed.sort_unstable();
        removals.push(LayerRemoval {
            layer_index: i,
            removed_channels: removed,
        });
    }
    let (reduced_layers, _) = propagate_removals(model, &removals)?;
    Ok(StructuredPlan {
        rho,
        removals,
        reduced_layers,
    })
}

/// Materialize the reduced model described by a plan. The result has
/// genuinely smaller tensors; removed channels and the downstream slices
/// that consumed them are gone.
pub fn apply_structured(model: &Model, plan: &StructuredPlan) -> Result<Model, PruneError> {
    let (layers, params) = propagate_removals(model, &plan.removals)?;
    if layers != plan.reduced_layers {
        return Err(PruneError::PlanInvalid(
            "plan's reduced shapes do not match this model".into(),
        ));
    }
    Ok(Model::new(model.input_shape(), layers, params)?)
}

fn keep_flags(total: usize, removed: &[usize]) -> Result<Vec<bool>, PruneError> {
    let mut keep = vec![true; total];
    let mut prev: Option<usize> = None;
    for &c in removed {
        if c >= total {
            return Err(PruneError::PlanInvalid(format!(
                "channel {c} out of range for {total} channels"
            )));
        }
        if prev.is_some_and(|p| p >= c) {
            return Err(PruneError::PlanInvalid(
                "removed channels must be strictly increasing".into(),
            ));
        }
        prev = Some(c);
        keep[c] = false;
    }
    if keep.iter().all(|k| !k) {
        return Err(PruneError::PlanInvalid(
            "a layer may not lose all of its channels".into(),
        ));
    }
    Ok(keep)
}

fn filter_vector(t: &Tensor<f32>, keep: &[bool]) -> Tensor<f32> {
    let data: Vec<f32> = t
        .data()
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&v, _)| v)
        .collect();
    Tensor::vector(data).expect("filtered vector stays valid")
}

/// Walk the chain once, dropping removed output channels and the input
/// slices that consumed them downstream.
fn propagate_removals(
    model: &Model,
    removals: &[LayerRemoval],
) -> Result<(Vec<LayerSpec>, Vec<LayerParams>), PruneError> {
    for r in removals {
        let layer = model.layers().get(r.layer_index).ok_or_else(|| {
            PruneError::PlanInvalid(format!("layer index {} out of range", r.layer_index))
        })?;
        if !layer.is_prunable() || layer.is_embedding_head() {
            return Err(PruneError::PlanInvalid(format!(
                "layer {} is not structurally prunable",
                r.layer_index
            )));
        }
        if r.removed_channels.is_empty() {
            return Err(PruneError::PlanInvalid(
                "plan entries must remove at least one channel".into(),
            ));
        }
    }

    let removal_for = |i: usize| -> &[usize] {
        removals
            .iter()
            .find(|r| r.layer_index == i)
            .map(|r| r.removed_channels.as_slice())
            .unwrap_or(&[])
    };

    // `removed_in` holds positions removed from the value flowing into the
    // next layer, in the ORIGINAL model's indexing; `shape` tracks the
    // original chain shape so Flatten can expand channels to element ranges.
    let mut removed_in: Vec<usize> = Vec::new();
    let mut shape = model.input_shape();
    let mut new_layers = Vec::with_capacity(model.layers().len());
    let mut new_params = Vec::with_capacity(model.layers().len());

    for (i, (layer, params)) in model.layers().iter().zip(model.params()).enumerate() {
        match (layer, params) {
            (
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    embedding_head,
                },
                LayerParams::Dense { weight, bias },
            ) => {
                let keep_in = keep_flags(*in_features, &removed_in)?;
                let removed_out = removal_for(i);
                let keep_out = keep_flags(*out_features, removed_out)?;
                let new_in = keep_in.iter().filter(|&&k| k).count();
                let new_out = keep_out.iter().filter(|&&k| k).count();
                let mut data = Vec::with_capacity(new_out * new_in);
                for (r, _) in keep_out.iter().enumerate().filter(|(_, &k)| k) {
                    let row = &weight.data()[r * in_features..(r + 1) * in_features];
                    for (value, _) in row.iter().zip(&keep_in).filter(|(_, &k)| k) {
                        data.push(*value);
                    }
                }
                new_layers.push(LayerSpec::Dense {
                    in_features: new_in,
                    out_features: new_out,
                    embedding_head: *embedding_head,
                });
                new_params.push(LayerParams::Dense {
                    weight: Tensor::new(vec![new_out, new_in], data)
                        .map_err(|e| PruneError::PlanInvalid(e.to_string()))?,
                    bias: filter_vector(bias, &keep_out),
                });
                removed_in = removed_out.to_vec();
                shape = DataShape::Vector { len: *out_features };
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    pad,
                },
                LayerParams::Conv2d { kernel: kdata, bias },
            ) => {
                let keep_in = keep_flags(*in_channels, &removed_in)?;
                let removed_out = removal_for(i);
                let keep_out = keep_flags(*out_channels, removed_out)?;
                let new_in = keep_in.iter().filter(|&&k| k).count();
                let new_out = keep_out.iter().filter(|&&k| k).count();
                let kk = kernel * kernel;
                let mut data = Vec::with_capacity(new_out * new_in * kk);
                for (co, _) in keep_out.iter().enumerate().filter(|(_, &k)| k) {
                    for (ci, _) in keep_in.iter().enumerate().filter(|(_, &k)| k) {
                        let start = (co * in_channels + ci) * kk;
                        data.extend_from_slice(&kdata.data()[start..start + kk]);
                    }
                }
                new_layers.push(LayerSpec::Conv2d {
                    in_channels: new_in,
                    out_channels: new_out,
                    kernel: *kernel,
                    stride: *stride,
                    pad: *pad,
                });
                new_params.push(LayerParams::Conv2d {
                    kernel: Tensor::new(vec![new_out, new_in, *kernel, *kernel], data)
                        .map_err(|e| PruneError::PlanInvalid(e.to_string()))?,
                    bias: filter_vector(bias, &keep_out),
                });
                removed_in = removed_out.to_vec();
                let (h, w) = match shape {
                    DataShape::Image { height, width, .. } => (height, width),
                    DataShape::Vector { .. } => {
                        return Err(PruneError::UnsupportedTopology(
                            "conv layer fed by a vector".into(),
                        ))
                    }
                };
                let h2 = crate::tensor::conv_output_extent(h, *kernel, *stride, *pad)
                    .map_err(|e| PruneError::PlanInvalid(e.to_string()))?;
                let w2 = crate::tensor::conv_output_extent(w, *kernel, *stride, *pad)
                    .map_err(|e| PruneError::PlanInvalid(e.to_string()))?;
                shape = DataShape::Image {
                    channels: *out_channels,
                    height: h2,
                    width: w2,
                };
            }
            (
                LayerSpec::BatchNorm { channels, epsilon },
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    variance,
                },
            ) => {
                let keep = keep_flags(*channels, &removed_in)?;
                let new_c = keep.iter().filter(|&&k| k).count();
                new_layers.push(LayerSpec::BatchNorm {
                    channels: new_c,
                    epsilon: *epsilon,
                });
                new_params.push(LayerParams::BatchNorm {
                    gamma: filter_vector(gamma, &keep),
                    beta: filter_vector(beta, &keep),
                    mean: filter_vector(mean, &keep),
                    variance: filter_vector(variance, &keep),
                });
                // Channel positions pass through unchanged.
            }
            (LayerSpec::Relu, _) => {
                new_layers.push(LayerSpec::Relu);
                new_params.push(LayerParams::None);
            }
            (LayerSpec::GlobalAvgPool, _) => {
                new_layers.push(LayerSpec::GlobalAvgPool);
                new_params.push(LayerParams::None);
                if let DataShape::Image { channels, .. } = shape {
                    shape = DataShape::Vector { len: channels };
                }
                // Channel index c becomes vector position c.
            }
            (LayerSpec::Flatten, _) => {
                new_layers.push(LayerSpec::Flatten);
                new_params.push(LayerParams::None);
                if let DataShape::Image {
                    channels,
                    height,
                    width,
                } = shape
                {
                    let spatial = height * width;
                    let mut expanded = Vec::with_capacity(removed_in.len() * spatial);
                    for &c in &removed_in {
                        expanded.extend((c * spatial)..((c + 1) * spatial));
                    }
                    removed_in = expanded;
                    shape = DataShape::Vector {
                        len: channels * spatial,
                    };
                }
            }
            (LayerSpec::L2Normalize, _) => {
                if !removed_in.is_empty() {
                    return Err(PruneError::UnsupportedTopology(
                        "removed channels reached the normalization layer; \
                         the embedding head must absorb all reductions"
                            .into(),
                    ));
                }
                new_layers.push(LayerSpec::L2Normalize);
                new_params.push(LayerParams::None);
            }
            _ => unreachable!("layer/params agreement is validated at construction"),
        }
    }
    Ok((new_layers, new_params))
}

// ---------------------------------------------------------------------------
// Mask sidecar file (.pfqmask): one-line JSON header, then the mask bits
// packed little-endian (bit i lives at byte i/8, bit position i%8).
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MaskHeader {
    n: usize,
    rho: f64,
    criterion: Criterion,
    granularity: Granularity,
    seed: Option<u64>,
    tau: Option<f32>,
}

pub fn mask_to_bytes(mask: &PruneMask) -> Vec<u8> {
    let header = MaskHeader {
        n: mask.len(),
        rho: mask.rho,
        criterion: mask.criterion,
        granularity: mask.granularity,
        seed: mask.seed,
        tau: mask.tau,
    };
    let mut out = serde_json::to_vec(&header).expect("mask header serializes");
    out.push(b'\n');
    let mut packed = vec![0u8; mask.len().div_ceil(8)];
    for (i, &bit) in mask.bits.iter().enumerate() {
        if bit {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out
}

pub fn mask_from_bytes(bytes: &[u8]) -> Result<PruneMask, PruneError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| PruneError::MaskFileInvalid("missing header delimiter".into()))?;
    let header: MaskHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| PruneError::MaskFileInvalid(format!("header: {e}")))?;
    let payload = &bytes[newline + 1..];
    let expected_bytes = header.n.div_ceil(8);
    if payload.len() != expected_bytes {
        return Err(PruneError::MaskFileInvalid(format!(
            "payload holds {} bytes, {} required for {} bits",
            payload.len(),
            expected_bytes,
            header.n
        )));
    }
    let mut bits = Vec::with_capacity(header.n);
    for i in 0..header.n {
        bits.push(payload[i / 8] >> (i % 8) & 1 == 1);
    }
    // Trailing pad bits must be zero.
    for i in header.n..expected_bytes * 8 {
        if payload[i / 8] >> (i % 8) & 1 == 1 {
            return Err(PruneError::MaskFileInvalid("nonzero padding bits".into()));
        }
    }
    PruneMask::from_parts(
        bits,
        header.rho,
        header.criterion,
        header.granularity,
        header.seed,
        header.tau,
    )
}

pub fn write_mask_file<P: AsRef<Path>>(path: P, mask: &PruneMask) -> Result<(), PruneError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&mask_to_bytes(mask))?;
    Ok(())
}

pub fn read_mask_file<P: AsRef<Path>>(path: P) -> Result<PruneMask, PruneError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    mask_from_bytes(&bytes)
}
