//! Layer-structured embedding networks.
//!
//! A [`Model`] is a sequential chain of layers ending in an L2 normalization,
//! so its forward pass always produces a unit-norm embedding. Dense and
//! convolution layers are the prunable set; their weights and biases are
//! exposed through a canonical flat view ([`ParamView`]) over which masks and
//! perturbations are defined. Models are immutable after construction:
//! masking returns a fresh model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pruning::PruneMask;
use crate::tensor::{
    self, conv_output_extent, Element, Tensor, TensorError,
};

/// Default batch-normalization epsilon.
pub const BATCHNORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("parameter vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// One layer of a sequential chain, with its shape metadata.
///
/// Dense and Conv2d layers are prunable; exactly one Dense layer must carry
/// `embedding_head = true` and sit immediately before the final
/// `L2Normalize`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        embedding_head: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    BatchNorm {
        channels: usize,
        epsilon: f64,
    },
    GlobalAvgPool,
    Flatten,
    L2Normalize,
}

impl LayerSpec {
    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn is_embedding_head(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense {
                embedding_head: true,
                ..
            }
        )
    }

    /// Total number of stored parameter values for this layer.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => out_features * in_features + out_features,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::BatchNorm { channels, .. } => 4 * channels,
            _ => 0,
        }
    }
}

/// Parameter tensors belonging to one layer, in canonical storage order.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T: Element = f32> {
    Dense { weight: Tensor<T>, bias: Tensor<T> },
    Conv2d { kernel: Tensor<T>, bias: Tensor<T> },
    BatchNorm {
        gamma: Tensor<T>,
        beta: Tensor<T>,
        mean: Tensor<T>,
        variance: Tensor<T>,
    },
    None,
}

impl<T: Element> LayerParams<T> {
    fn convert<U: Element>(&self) -> LayerParams<U> {
        match self {
            LayerParams::Dense { weight, bias } => LayerParams::Dense {
                weight: weight.convert(),
                bias: bias.convert(),
            },
            LayerParams::Conv2d { kernel, bias } => LayerParams::Conv2d {
                kernel: kernel.convert(),
                bias: bias.convert(),
            },
            LayerParams::BatchNorm {
                gamma,
                beta,
                mean,
                variance,
            } => LayerParams::BatchNorm {
                gamma: gamma.convert(),
                beta: beta.convert(),
                mean: mean.convert(),
                variance: variance.convert(),
            },
            LayerParams::None => LayerParams::None,
        }
    }
}

/// Shape of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataShape {
    Vector { len: usize },
    Image { channels: usize, height: usize, width: usize },
}

impl DataShape {
    pub fn dims(&self) -> Vec<usize> {
        match *self {
            DataShape::Vector { len } => vec![len],
            DataShape::Image {
                channels,
                height,
                width,
            } => vec![channels, height, width],
        }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Self, ModelError> {
        match dims {
            [len] if *len > 0 => Ok(DataShape::Vector { len: *len }),
            [c, h, w] if *c > 0 && *h > 0 && *w > 0 => Ok(DataShape::Image {
                channels: *c,
                height: *h,
                width: *w,
            }),
            other => Err(ModelError::Invalid(format!(
                "input shape must be [n] or [c, h, w] with positive extents, got {other:?}"
            ))),
        }
    }
}

/// Propagate a shape through one layer, checking conformance.
fn infer_output_shape(layer: &LayerSpec, input: DataShape) -> Result<DataShape, ModelError> {
    let fail = |msg: String| Err(ModelError::Invalid(msg));
    match (layer, input) {
        (
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            },
            DataShape::Vector { len },
        ) => {
            if len != *in_features {
                return fail(format!(
                    "dense layer expects {in_features} inputs, chain provides {len}"
                ));
            }
            Ok(DataShape::Vector { len: *out_features })
        }
        (
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            },
            DataShape::Image {
                channels,
                height,
                width,
            },
        ) => {
            if channels != *in_channels {
                return fail(format!(
                    "conv layer expects {in_channels} channels, chain provides {channels}"
                ));
            }
            let h = conv_output_extent(height, *kernel, *stride, *pad)
                .map_err(|e| ModelError::Invalid(e.to_string()))?;
            let w = conv_output_extent(width, *kernel, *stride, *pad)
                .map_err(|e| ModelError::Invalid(e.to_string()))?;
            Ok(DataShape::Image {
                channels: *out_channels,
                height: h,
                width: w,
            })
        }
        (LayerSpec::Relu, any) => Ok(any),
        (LayerSpec::BatchNorm { channels, .. }, DataShape::Vector { len }) => {
            if len != *channels {
                return fail(format!(
                    "batchnorm expects {channels} channels, chain provides vector of {len}"
                ));
            }
            Ok(input)
        }
        (LayerSpec::BatchNorm { channels, .. }, DataShape::Image { channels: c, .. }) => {
            if c != *channels {
                return fail(format!(
                    "batchnorm expects {channels} channels, chain provides {c}"
                ));
            }
            Ok(input)
        }
        (LayerSpec::GlobalAvgPool, DataShape::Image { channels, .. }) => {
            Ok(DataShape::Vector { len: channels })
        }
        (
            LayerSpec::Flatten,
            DataShape::Image {
                channels,
                height,
                width,
            },
        ) => Ok(DataShape::Vector {
            len: channels * height * width,
        }),
        (LayerSpec::Flatten, v @ DataShape::Vector { .. }) => Ok(v),
        (LayerSpec::L2Normalize, v @ DataShape::Vector { .. }) => Ok(v),
        (layer, input) => fail(format!("layer {layer:?} cannot consume shape {input:?}")),
    }
}

fn check_params_match<T: Element>(
    index: usize,
    layer: &LayerSpec,
    params: &LayerParams<T>,
) -> Result<(), ModelError> {
    let fail = |msg: String| Err(ModelError::Invalid(format!("layer {index}: {msg}")));
    match (layer, params) {
        (
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            },
            LayerParams::Dense { weight, bias },
        ) => {
            if weight.shape() != [*out_features, *in_features] {
                return fail(format!(
                    "dense weight shape {:?}, expected [{out_features}, {in_features}]",
                    weight.shape()
                ));
            }
            if bias.shape() != [*out_features] {
                return fail(format!("dense bias shape {:?}", bias.shape()));
            }
            Ok(())
        }
        (
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            },
            LayerParams::Conv2d { kernel: k, bias },
        ) => {
            if k.shape() != [*out_channels, *in_channels, *kernel, *kernel] {
                return fail(format!("conv kernel shape {:?}", k.shape()));
            }
            if bias.shape() != [*out_channels] {
                return fail(format!("conv bias shape {:?}", bias.shape()));
            }
            Ok(())
        }
        (
            LayerSpec::BatchNorm { channels, .. },
            LayerParams::BatchNorm {
                gamma,
                beta,
                mean,
                variance,
            },
        ) => {
            for (t, role) in [
                (gamma, "gamma"),
                (beta, "beta"),
                (mean, "mean"),
                (variance, "variance"),
            ] {
                if t.shape() != [*channels] {
                    return fail(format!("batchnorm {role} shape {:?}", t.shape()));
                }
            }
            Ok(())
        }
        (
            LayerSpec::Relu | LayerSpec::GlobalAvgPool | LayerSpec::Flatten | LayerSpec::L2Normalize,
            LayerParams::None,
        ) => Ok(()),
        _ => fail("parameter kind does not match layer kind".into()),
    }
}

/// Identifies which tensor of a layer a flat parameter index falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamTensor {
    Weight,
    Bias,
}

/// One contiguous run of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub layer: usize,
    pub tensor: ParamTensor,
    pub start: usize,
    pub len: usize,
}

/// Canonical flat view of all prunable parameters.
///
/// Layers appear in declaration order; within a layer the weight (or kernel)
/// tensor comes first in row-major order, then the bias. The slot table maps
/// flat indices back to `(layer, tensor, offset)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamView<T: Element = f32> {
    values: Vec<T>,
    slots: Vec<ParamSlot>,
}

impl<T: Element> ParamView<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    /// Map a flat index to its layer, tensor, and offset within the tensor.
    pub fn locate(&self, flat: usize) -> Option<(usize, ParamTensor, usize)> {
        let slot = self
            .slots
            .iter()
            .find(|s| flat >= s.start && flat < s.start + s.len)?;
        Some((slot.layer, slot.tensor, flat - slot.start))
    }
}

/// A sequential embedding network with unit-norm output.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element = f32> {
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams<T>>,
    input_shape: DataShape,
    embedding_dim: usize,
}

impl<T: Element> Model<T> {
    /// Validate and assemble a model. Checks the layer chain end-to-end:
    /// conforming shapes, a trailing `L2Normalize`, exactly one embedding
    /// head immediately before it, and parameter tensors matching the specs.
    pub fn new(
        input_shape: DataShape,
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams<T>>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Invalid("model has no layers".into()));
        }
        if layers.len() != params.len() {
            return Err(ModelError::Invalid(format!(
                "{} layers but {} parameter blocks",
                layers.len(),
                params.len()
            )));
        }
        if !matches!(layers.last(), Some(LayerSpec::L2Normalize)) {
            return Err(ModelError::Invalid(
                "the last layer must be l2_normalize".into(),
            ));
        }
        let head_positions: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_embedding_head())
            .map(|(i, _)| i)
            .collect();
        if head_positions.len() != 1 {
            return Err(ModelError::Invalid(format!(
                "expected exactly one embedding head, found {}",
                head_positions.len()
            )));
        }
        if head_positions[0] + 2 != layers.len() {
            return Err(ModelError::Invalid(
                "the embedding head must immediately precede the final l2_normalize".into(),
            ));
        }
        let embedding_dim = match layers[head_positions[0]] {
            LayerSpec::Dense { out_features, .. } => out_features,
            _ => unreachable!("embedding head is always dense"),
        };

        let mut shape = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            check_params_match(i, layer, &params[i])?;
            shape = infer_output_shape(layer, shape)
                .map_err(|e| ModelError::Invalid(format!("layer {i}: {e}")))?;
        }

        Ok(Model {
            layers,
            params,
            input_shape,
            embedding_dim,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams<T>] {
        &self.params
    }

    pub fn input_shape(&self) -> DataShape {
        self.input_shape
    }

    /// Dimensionality of the output embedding.
    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Total count of prunable parameters (dense/conv weights and biases).
    pub fn num_prunable_params(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.is_prunable())
            .map(|l| l.param_count())
            .sum()
    }

    /// Element-wise precision conversion of every parameter tensor.
    pub fn convert<U: Element>(&self) -> Model<U> {
        Model {
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| p.convert()).collect(),
            input_shape: self.input_shape,
            embedding_dim: self.embedding_dim,
        }
    }

    /// Run the network; the trailing normalization guarantees a unit-norm
    /// embedding or a `ZeroNorm` error for degenerate (e.g. fully pruned)
    /// models.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        if x.shape() != self.input_shape.dims().as_slice() {
            return Err(ModelError::Tensor(TensorError::ShapeMismatch(format!(
                "input shape {:?}, model expects {:?}",
                x.shape(),
                self.input_shape.dims()
            ))));
        }
        let mut value = x.clone();
        for (layer, params) in self.layers.iter().zip(&self.params) {
            value = match (layer, params) {
                (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => {
                    tensor::dense_forward(&value, weight, bias)?
                }
                (
                    LayerSpec::Conv2d { stride, pad, .. },
                    LayerParams::Conv2d { kernel, bias },
                ) => tensor::conv2d_forward(&value, kernel, bias, *stride, *pad)?,
                (LayerSpec::Relu, _) => tensor::relu(&value),
                (
                    LayerSpec::BatchNorm { epsilon, .. },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        mean,
                        variance,
                    },
                ) => tensor::batchnorm_apply(&value, gamma, beta, mean, variance, *epsilon)?,
                (LayerSpec::GlobalAvgPool, _) => tensor::global_avg_pool(&value)?,
                (LayerSpec::Flatten, _) => tensor::flatten(&value),
                (LayerSpec::L2Normalize, _) => tensor::l2_normalize(&value)?,
                _ => unreachable!("layer/params agreement is validated at construction"),
            };
        }
        Ok(value)
    }

    /// Gather the canonical flat view of all prunable parameters.
    pub fn param_vector_view(&self) -> ParamView<T> {
        let mut values = Vec::with_capacity(self.num_prunable_params());
        let mut slots = Vec::new();
        for (i, (layer, params)) in self.layers.iter().zip(&self.params).enumerate() {
            if !layer.is_prunable() {
                continue;
            }
            let (weight, bias) = match params {
                LayerParams::Dense { weight, bias } => (weight, bias),
                LayerParams::Conv2d { kernel, bias } => (kernel, bias),
                _ => unreachable!("prunable layers carry dense/conv params"),
            };
            slots.push(ParamSlot {
                layer: i,
                tensor: ParamTensor::Weight,
                start: values.len(),
                len: weight.len(),
            });
            values.extend_from_slice(weight.data());
            slots.push(ParamSlot {
                layer: i,
                tensor: ParamTensor::Bias,
                start: values.len(),
                len: bias.len(),
            });
            values.extend_from_slice(bias.data());
        }
        ParamView { values, slots }
    }

    /// Scatter a flat parameter vector back into a new model. Inverse of
    /// [`Model::param_vector_view`]: `scatter(gather(m)) == m` bit-exactly.
    pub fn with_param_vector(&self, flat: &[T]) -> Result<Model<T>, ModelError> {
        let expected = self.num_prunable_params();
        if flat.len() != expected {
            return Err(ModelError::LengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        let mut params = self.params.clone();
        let mut cursor = 0usize;
        for (layer, block) in self.layers.iter().zip(params.iter_mut()) {
            if !layer.is_prunable() {
                continue;
            }
            let (weight, bias) = match block {
                LayerParams::Dense { weight, bias } => (weight, bias),
                LayerParams::Conv2d { kernel, bias } => (kernel, bias),
                _ => unreachable!(),
            };
            for slot in [weight, bias] {
                let n = slot.len();
                slot.data_mut().copy_from_slice(&flat[cursor..cursor + n]);
                cursor += n;
            }
        }
        debug_assert_eq!(cursor, expected);
        // Finiteness of `flat` was enforced by the caller's tensors; shapes
        // are unchanged, so revalidation is unnecessary.
        Ok(Model {
            layers: self.layers.clone(),
            params,
            input_shape: self.input_shape,
            embedding_dim: self.embedding_dim,
        })
    }

    /// Zero out masked parameters, returning a new model. Non-prunable
    /// parameters are copied verbatim.
    pub fn apply_mask(&self, mask: &PruneMask) -> Result<Model<T>, ModelError> {
        let view = self.param_vector_view();
        if mask.len() != view.len() {
            return Err(ModelError::LengthMismatch {
                expected: view.len(),
                got: mask.len(),
            });
        }
        let masked: Vec<T> = view
            .values()
            .iter()
            .zip(mask.bits())
            .map(|(&v, &keep)| if keep { v } else { T::zero() })
            .collect();
        self.with_param_vector(&masked)
    }
}
