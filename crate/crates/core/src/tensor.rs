//! Dense row-major arrays and the layer arithmetic the inference engine needs.
//!
//! Values are stored in 32-bit floats (`NdArray`); every reduction (dot
//! products, convolution sums, norms, pooling means) accumulates in 64-bit
//! with a fixed left-to-right order, so results are deterministic across
//! platforms, runs, and thread counts. A 64-bit instantiation
//! (`Tensor<f64>`) backs the directional-derivative path, which needs more
//! headroom than 32-bit storage provides.

use thiserror::Error;

/// Norm below which a vector is treated as degenerate by [`l2_normalize`].
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vector norm {norm:e} is at or below the degeneracy floor {floor:e}")]
    ZeroNorm { norm: f64, floor: f64 },
    #[error("convolution output size is not a positive integer: {0}")]
    NonIntegralOutputSize(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Scalar types the tensor ops are defined over. Implemented for `f32`
/// (storage precision) and `f64` (the high-precision evaluation path).
pub trait Element: Copy + PartialEq + PartialOrd + std::fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite_value(self) -> bool;
    fn zero() -> Self;
}

impl Element for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
    fn zero() -> Self {
        0.0
    }
}

impl Element for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
    fn zero() -> Self {
        0.0
    }
}

/// Dense array with row-major contiguous data.
///
/// Invariants enforced at every construction: the shape product equals the
/// data length, every extent is positive, and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// The public 32-bit array type used for inputs, activations, and embeddings.
pub type NdArray = Tensor<f32>;

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} has a zero or missing extent"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} implies {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite_value()) {
            return Err(TensorError::NonFinite(format!("element {i}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<T>) -> Result<Self, TensorError> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![T::zero(); n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element-wise precision conversion.
    pub fn convert<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

fn require_rank<T: Element>(t: &Tensor<T>, rank: usize, role: &str) -> Result<(), TensorError> {
    if t.rank() != rank {
        return Err(TensorError::ShapeMismatch(format!(
            "{role} must have rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Scale a vector to unit Euclidean norm. The norm is accumulated in 64-bit;
/// norms at or below [`NORM_FLOOR`] are reported as [`TensorError::ZeroNorm`].
pub fn l2_normalize<T: Element>(v: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    require_rank(v, 1, "l2_normalize input")?;
    let mut sum_sq = 0.0f64;
    for x in v.data() {
        let x = x.to_f64();
        sum_sq += x * x;
    }
    let norm = sum_sq.sqrt();
    if norm <= NORM_FLOOR {
        return Err(TensorError::ZeroNorm {
            norm,
            floor: NORM_FLOOR,
        });
    }
    let data = v
        .data()
        .iter()
        .map(|x| T::from_f64(x.to_f64() / norm))
        .collect();
    Tensor::new(v.shape().to_vec(), data)
}

/// `out[i] = sum_j w[i][j] * x[j] + b[i]`, accumulated in 64-bit
/// left-to-right before rounding back to the element type.
pub fn dense_forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    require_rank(x, 1, "dense input")?;
    require_rank(weight, 2, "dense weight")?;
    require_rank(bias, 1, "dense bias")?;
    let (n_out, n_in) = (weight.shape()[0], weight.shape()[1]);
    if x.len() != n_in || bias.len() != n_out {
        return Err(TensorError::ShapeMismatch(format!(
            "dense weight {}x{} vs input {} and bias {}",
            n_out,
            n_in,
            x.len(),
            bias.len()
        )));
    }
    let w = weight.data();
    let xv = x.data();
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let mut acc = 0.0f64;
        let row = &w[i * n_in..(i + 1) * n_in];
        for j in 0..n_in {
            acc += row[j].to_f64() * xv[j].to_f64();
        }
        acc += bias.data()[i].to_f64();
        out.push(T::from_f64(acc));
    }
    Tensor::new(vec![n_out], out)
}

/// Spatial output extent of a convolution, or an error when the stride does
/// not divide the padded span exactly.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::ShapeMismatch("stride must be positive".into()));
    }
    let span = input + 2 * pad;
    if span < kernel {
        return Err(TensorError::NonIntegralOutputSize(format!(
            "kernel {kernel} exceeds padded input {span}"
        )));
    }
    let steps = span - kernel;
    if !steps.is_multiple_of(stride) {
        return Err(TensorError::NonIntegralOutputSize(format!(
            "(input {input} + 2*pad {pad} - kernel {kernel}) not divisible by stride {stride}"
        )));
    }
    Ok(steps / stride + 1)
}

/// Direct cross-correlation with zero padding; 64-bit accumulation in a
/// fixed channel-row-column order, bias added last.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    require_rank(x, 3, "conv input")?;
    require_rank(kernel, 4, "conv kernel")?;
    require_rank(bias, 1, "conv bias")?;
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, kc_in, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kh != kw {
        return Err(TensorError::ShapeMismatch(format!(
            "kernel must be square, got {kh}x{kw}"
        )));
    }
    if kc_in != c_in || bias.len() != c_out {
        return Err(TensorError::ShapeMismatch(format!(
            "conv kernel {c_out}x{kc_in}x{kh}x{kw} vs input channels {c_in} and bias {}",
            bias.len()
        )));
    }
    let h_out = conv_output_extent(h, kh, stride, pad)?;
    let w_out = conv_output_extent(w, kw, stride, pad)?;

    let xd = x.data();
    let kd = kernel.data();
    let mut out = Vec::with_capacity(c_out * h_out * w_out);
    for co in 0..c_out {
        for oi in 0..h_out {
            for oj in 0..w_out {
                let mut acc = 0.0f64;
                for ci in 0..c_in {
                    for u in 0..kh {
                        let ii = oi * stride + u;
                        if ii < pad || ii - pad >= h {
                            continue;
                        }
                        let row = ii - pad;
                        for v in 0..kw {
                            let jj = oj * stride + v;
                            if jj < pad || jj - pad >= w {
                                continue;
                            }
                            let col = jj - pad;
                            let kval = kd[((co * c_in + ci) * kh + u) * kw + v].to_f64();
                            let xval = xd[(ci * h + row) * w + col].to_f64();
                            acc += kval * xval;
                        }
                    }
                }
                acc += bias.data()[co].to_f64();
                out.push(T::from_f64(acc));
            }
        }
    }
    Tensor::new(vec![c_out, h_out, w_out], out)
}

/// Element-wise `max(x, 0)`.
pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// Inference-mode batch normalization: `gamma * (x - mean) / sqrt(var + eps) + beta`.
///
/// Accepts a rank-3 `C x H x W` input with per-channel statistics, or a
/// rank-1 input of length `C` treated as one value per channel.
pub fn batchnorm_apply<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    variance: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, TensorError> {
    let channels = gamma.len();
    for (t, role) in [(beta, "beta"), (mean, "mean"), (variance, "variance")] {
        if t.rank() != 1 || t.len() != channels {
            return Err(TensorError::ShapeMismatch(format!(
                "batchnorm {role} must be rank-1 of length {channels}"
            )));
        }
    }
    let channel_of = |flat: usize| -> usize {
        match x.rank() {
            1 => flat,
            3 => flat / (x.shape()[1] * x.shape()[2]),
            _ => unreachable!(),
        }
    };
    match x.rank() {
        1 if x.len() == channels => {}
        3 if x.shape()[0] == channels => {}
        _ => {
            return Err(TensorError::ShapeMismatch(format!(
                "batchnorm input shape {:?} incompatible with {channels} channels",
                x.shape()
            )))
        }
    }
    let mut out = Vec::with_capacity(x.len());
    for (flat, v) in x.data().iter().enumerate() {
        let c = channel_of(flat);
        let denom = (variance.data()[c].to_f64() + eps).sqrt();
        let y = gamma.data()[c].to_f64() * (v.to_f64() - mean.data()[c].to_f64()) / denom
            + beta.data()[c].to_f64();
        out.push(T::from_f64(y));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Mean over the spatial dimensions of a `C x H x W` input, one value per channel.
pub fn global_avg_pool<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    require_rank(x, 3, "global_avg_pool input")?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let spatial = h * w;
    let mut out = Vec::with_capacity(c);
    for ci in 0..c {
        let mut acc = 0.0f64;
        for s in 0..spatial {
            acc += x.data()[ci * spatial + s].to_f64();
        }
        out.push(T::from_f64(acc / spatial as f64));
    }
    Tensor::new(vec![c], out)
}

/// Row-major reshape to rank 1; the data is untouched.
pub fn flatten<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: vec![x.len()],
        data: x.data().to_vec(),
    }
}
