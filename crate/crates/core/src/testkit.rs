//! Randomized model and data builders shared by the test suites.
//!
//! Everything here is seed-driven through the crate's own [`Rng`], so each
//! generated case is reproducible from its seed alone.

use crate::model::{DataShape, LayerParams, LayerSpec, Model, BATCHNORM_EPS};
use crate::rng::Rng;
use crate::tensor::{NdArray, Tensor};

fn randn_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f32> {
    (0..n).map(|_| (rng.standard_normal() * scale) as f32).collect()
}

/// Random dense/ReLU chain: 1-3 hidden layers of width 2-8, ending in an
/// embedding head and normalization.
pub fn random_dense_model(seed: u64) -> Model {
    let mut rng = Rng::from_seed(seed);
    let input_dim = 2 + rng.below(7) as usize;
    let depth = 1 + rng.below(3) as usize;
    let mut widths = vec![input_dim];
    for _ in 0..depth {
        widths.push(2 + rng.below(7) as usize);
    }
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for l in 0..depth {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let head = l + 1 == depth;
        layers.push(LayerSpec::Dense {
            in_features: n_in,
            out_features: n_out,
            embedding_head: head,
        });
        params.push(LayerParams::Dense {
            weight: Tensor::new(vec![n_out, n_in], randn_vec(&mut rng, n_out * n_in, 0.7))
                .unwrap(),
            bias: Tensor::vector(randn_vec(&mut rng, n_out, 0.2)).unwrap(),
        });
        if !head {
            layers.push(LayerSpec::Relu);
            params.push(LayerParams::None);
        }
    }
    layers.push(LayerSpec::L2Normalize);
    params.push(LayerParams::None);
    Model::new(DataShape::Vector { len: input_dim }, layers, params).unwrap()
}

/// Random model that is sometimes a small convolutional stack (conv,
/// optional batchnorm, pooling or flatten) in front of the dense head.
pub fn random_mixed_model(seed: u64) -> Model {
    let mut rng = Rng::from_seed(seed);
    if rng.below(2) == 0 {
        return random_dense_model(seed ^ 0x9E37_79B9);
    }
    let c_in = 1 + rng.below(2) as usize;
    let hw = 3 + rng.below(3) as usize;
    let c_out = 2 + rng.below(3) as usize;
    let kernel = 1 + 2 * rng.below(2) as usize; // 1 or 3
    let pad = if kernel == 3 { 1 } else { 0 };
    let with_batchnorm = rng.below(2) == 0;
    let with_pool = rng.below(2) == 0;

    let mut layers = vec![LayerSpec::Conv2d {
        in_channels: c_in,
        out_channels: c_out,
        kernel,
        stride: 1,
        pad,
    }];
    let mut params = vec![LayerParams::Conv2d {
        kernel: Tensor::new(
            vec![c_out, c_in, kernel, kernel],
            randn_vec(&mut rng, c_out * c_in * kernel * kernel, 0.6),
        )
        .unwrap(),
        bias: Tensor::vector(randn_vec(&mut rng, c_out, 0.2)).unwrap(),
    }];
    if with_batchnorm {
        layers.push(LayerSpec::BatchNorm {
            channels: c_out,
            epsilon: BATCHNORM_EPS,
        });
        params.push(LayerParams::BatchNorm {
            gamma: Tensor::vector((0..c_out).map(|_| 0.5 + rng.next_f64() as f32).collect())
                .unwrap(),
            beta: Tensor::vector(randn_vec(&mut rng, c_out, 0.2)).unwrap(),
            mean: Tensor::vector(randn_vec(&mut rng, c_out, 0.3)).unwrap(),
            variance: Tensor::vector((0..c_out).map(|_| 0.5 + rng.next_f64() as f32).collect())
                .unwrap(),
        });
    }
    layers.push(LayerSpec::Relu);
    params.push(LayerParams::None);
    let dense_in = if with_pool {
        layers.push(LayerSpec::GlobalAvgPool);
        params.push(LayerParams::None);
        c_out
    } else {
        layers.push(LayerSpec::Flatten);
        params.push(LayerParams::None);
        c_out * hw * hw
    };
    let d = 2 + rng.below(5) as usize;
    layers.push(LayerSpec::Dense {
        in_features: dense_in,
        out_features: d,
        embedding_head: true,
    });
    params.push(LayerParams::Dense {
        weight: Tensor::new(vec![d, dense_in], randn_vec(&mut rng, d * dense_in, 0.7)).unwrap(),
        bias: Tensor::vector(randn_vec(&mut rng, d, 0.2)).unwrap(),
    });
    layers.push(LayerSpec::L2Normalize);
    params.push(LayerParams::None);
    Model::new(
        DataShape::Image {
            channels: c_in,
            height: hw,
            width: hw,
        },
        layers,
        params,
    )
    .unwrap()
}

/// A random input matching the model's declared shape.
pub fn random_input(model: &Model, rng: &mut Rng) -> NdArray {
    let dims = model.input_shape().dims();
    let n: usize = dims.iter().product();
    Tensor::new(dims, randn_vec(rng, n, 1.0)).unwrap()
}

/// A random point on the unit sphere in `d` dimensions, stored in f32.
pub fn random_unit_embedding(rng: &mut Rng, d: usize) -> NdArray {
    loop {
        let v = randn_vec(rng, d, 1.0);
        let candidate = NdArray::vector(v).unwrap();
        if let Ok(unit) = crate::tensor::l2_normalize(&candidate) {
            return unit;
        }
    }
}
