//! Desk-scale experiment fixture: synthetic identities with graded input
//! noise, plus a small MLP trainer that produces embedding models for the
//! pipeline to prune and score.
//!
//! Identity centroids are drawn uniformly on the input-dimension unit
//! sphere; each sample is its centroid plus `sigma * gaussian` noise with
//! `sigma` cycling through the configured levels, so every sample carries a
//! ground-truth degradation value. The trainer optimizes a cosine-logit
//! softmax cross-entropy (logits are `s * cos(embedding, class_weight)`,
//! fixed scale `s`) by plain per-sample SGD with hand-derived gradients;
//! training is single-threaded and bit-reproducible by contract.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::format_f32;
use crate::model::{DataShape, LayerParams, LayerSpec, Model};
use crate::rng::Rng;
use crate::tensor::{NdArray, Tensor};

/// Logit scale for the cosine-softmax head. Small enough to avoid
/// saturation at embedding dimensions around 16.
pub const COSINE_SCALE: f64 = 16.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("unsupported architecture: {0}")]
    UnsupportedArch(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub input_dim: usize,
    pub embedding_dim: usize,
    /// Input-space noise standard deviations, cycled per sample.
    pub noise_levels: Vec<f64>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_identities < 2 {
            return Err(SynthError::ConfigInvalid(
                "need at least two identities".into(),
            ));
        }
        if self.samples_per_identity == 0 {
            return Err(SynthError::ConfigInvalid(
                "samples_per_identity must be positive".into(),
            ));
        }
        if self.input_dim == 0 || self.embedding_dim == 0 {
            return Err(SynthError::ConfigInvalid(
                "dimensions must be positive".into(),
            ));
        }
        if self.noise_levels.is_empty() {
            return Err(SynthError::ConfigInvalid(
                "noise_levels must be non-empty".into(),
            ));
        }
        if self.noise_levels.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(SynthError::ConfigInvalid(
                "noise levels must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub input: NdArray,
    pub label: usize,
    /// Ground-truth degradation: the noise level this sample was drawn with.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub samples: Vec<SynthSample>,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.input.len())
    }

    pub fn n_classes(&self) -> usize {
        self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
    }

    /// `(id, input)` pairs in dataset order, for the scoring batch API.
    pub fn scoring_inputs(&self) -> Vec<(String, NdArray)> {
        self.samples
            .iter()
            .map(|s| (s.id.clone(), s.input.clone()))
            .collect()
    }
}

/// Draw identity centroids on the unit sphere and perturb each sample with
/// its cycled noise level. Fully determined by the config.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset, SynthError> {
    cfg.validate()?;
    let mut rng = Rng::from_seed(cfg.seed);
    let mut centroids = Vec::with_capacity(cfg.n_identities);
    for _ in 0..cfg.n_identities {
        loop {
            let v: Vec<f64> = (0..cfg.input_dim).map(|_| rng.standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                centroids.push(v.into_iter().map(|x| x / norm).collect::<Vec<f64>>());
                break;
            }
        }
    }
    let mut samples = Vec::with_capacity(cfg.n_identities * cfg.samples_per_identity);
    for (label, centroid) in centroids.iter().enumerate() {
        for j in 0..cfg.samples_per_identity {
            let sigma = cfg.noise_levels[j % cfg.noise_levels.len()];
            let data: Vec<f32> = centroid
                .iter()
                .map(|&c| (c + sigma * rng.standard_normal()) as f32)
                .collect();
            samples.push(SynthSample {
                id: format!("id{label:04}_s{j:04}"),
                input: NdArray::vector(data).expect("finite sample"),
                label,
                sigma,
            });
        }
    }
    Ok(SynthDataset { samples })
}

// ---------------------------------------------------------------------------
// Trainer.
// ---------------------------------------------------------------------------

/// The trainable network: a dense/ReLU chain ending in a normalized
/// embedding, plus per-class weight vectors for the cosine-softmax loss.
/// All arithmetic is 64-bit; the finished model is cast to storage
/// precision at the end.
#[derive(Debug, Clone)]
pub struct TrainerNet {
    dims: Vec<usize>,
    n_classes: usize,
    /// Per layer, row-major `out x in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Row-major `n_classes x d`.
    class_weights: Vec<f64>,
}

impl TrainerNet {
    /// Glorot-uniform weights drawn row-major per layer (biases start at
    /// zero), then the class matrix, all from one seeded stream.
    pub fn new(dims: &[usize], n_classes: usize, seed: u64) -> Result<Self, SynthError> {
        if dims.len() < 2 {
            return Err(SynthError::UnsupportedArch(
                "need at least input and embedding widths".into(),
            ));
        }
        if dims.contains(&0) || n_classes < 2 {
            return Err(SynthError::UnsupportedArch(
                "widths must be positive and at least two classes required".into(),
            ));
        }
        let mut rng = Rng::from_seed(seed);
        let mut uniform = |limit: f64| (2.0 * rng.next_f64() - 1.0) * limit;
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push((0..fan_out * fan_in).map(|_| uniform(limit)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        let d = *dims.last().unwrap();
        let limit = (6.0 / (d + n_classes) as f64).sqrt();
        let class_weights = (0..n_classes * d).map(|_| uniform(limit)).collect();
        Ok(TrainerNet {
            dims: dims.to_vec(),
            n_classes,
            weights,
            biases,
            class_weights,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// All trainable values: per layer weight then bias, then the class
    /// matrix. Gradients from [`TrainerNet::loss_and_grad`] align with this.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.n_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out.extend_from_slice(&self.class_weights);
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut cursor = 0;
        for l in 0..self.n_layers() {
            let w = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[cursor..cursor + w]);
            cursor += w;
            let b = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[cursor..cursor + b]);
            cursor += b;
        }
        let n_class = self.class_weights.len();
        self.class_weights
            .copy_from_slice(&flat[cursor..cursor + n_class]);
    }

    /// Forward to the unit embedding; `None` if the raw embedding collapses.
    fn embed(&self, x: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>, f64)> {
        // Activations per layer boundary: a[0] = x, a[l] = relu(z_l) for
        // hidden layers, a[L] = z_L (raw embedding, pre-normalization).
        let mut activations = Vec::with_capacity(self.n_layers() + 1);
        activations.push(x.to_vec());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = activations.last().unwrap();
            let mut z = vec![0.0f64; n_out];
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &self.weights[l][i * n_in..(i + 1) * n_in];
                let mut acc = 0.0;
                for j in 0..n_in {
                    acc += row[j] * input[j];
                }
                *zi = acc + self.biases[l][i];
            }
            if l + 1 < self.n_layers() {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(z);
        }
        let raw = activations.last().unwrap();
        let r = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r <= 1e-12 {
            return None;
        }
        let e: Vec<f64> = raw.iter().map(|v| v / r).collect();
        Some((activations, e, r))
    }

    /// Scaled cosine logits for one input.
    pub fn logits(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (_, e, _) = self.embed(x)?;
        let d = self.embedding_dim();
        let mut logits = Vec::with_capacity(self.n_classes);
        for c in 0..self.n_classes {
            let w = &self.class_weights[c * d..(c + 1) * d];
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n <= 1e-12 {
                return None;
            }
            let cos = e.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / n;
            logits.push(COSINE_SCALE * cos);
        }
        Some(logits)
    }

    /// Cross-entropy of the cosine-softmax for one labeled input.
    pub fn loss(&self, x: &[f64], label: usize) -> Option<f64> {
        let logits = self.logits(x)?;
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        Some(lse - logits[label])
    }

    /// Loss plus the analytic gradient aligned with [`TrainerNet::flat_params`].
    pub fn loss_and_grad(&self, x: &[f64], label: usize) -> Option<(f64, Vec<f64>)> {
        let (activations, e, r) = self.embed(x)?;
        let d = self.embedding_dim();

        // Head: normalized class directions, cosines, softmax.
        let mut unit_class = vec![0.0f64; self.n_classes * d];
        let mut class_norms = vec![0.0f64; self.n_classes];
        let mut logits = vec![0.0f64; self.n_classes];
        for c in 0..self.n_classes {
            let w = &self.class_weights[c * d..(c + 1) * d];
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n <= 1e-12 {
                return None;
            }
            class_norms[c] = n;
            for (k, &wv) in w.iter().enumerate() {
                unit_class[c * d + k] = wv / n;
            }
            logits[c] = COSINE_SCALE
                * e.iter()
                    .zip(&unit_class[c * d..(c + 1) * d])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let loss = lse - logits[label];

        let mut grad = vec![0.0f64; self.flat_len()];
        let class_base = self.flat_len() - self.class_weights.len();

        // d loss / d logits = softmax - onehot.
        let mut g_e = vec![0.0f64; d];
        for c in 0..self.n_classes {
            let p = (logits[c] - lse).exp();
            let g_logit = p - if c == label { 1.0 } else { 0.0 };
            let g_cos = COSINE_SCALE * g_logit;
            let cos_c = logits[c] / COSINE_SCALE;
            let unit = &unit_class[c * d..(c + 1) * d];
            for k in 0..d {
                g_e[k] += g_cos * unit[k];
                // d cos / d w = (e - cos * unit) / ||w||
                grad[class_base + c * d + k] += g_cos * (e[k] - cos_c * unit[k]) / class_norms[c];
            }
        }

        // Through the normalization: project out the radial component.
        let radial = g_e.iter().zip(&e).map(|(g, ev)| g * ev).sum::<f64>();
        let mut g_z: Vec<f64> = g_e
            .iter()
            .zip(&e)
            .map(|(g, ev)| (g - radial * ev) / r)
            .collect();

        // Dense chain, last layer first.
        let mut layer_starts = Vec::with_capacity(self.n_layers());
        let mut cursor = 0;
        for l in 0..self.n_layers() {
            layer_starts.push(cursor);
            cursor += self.weights[l].len() + self.biases[l].len();
        }
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let input = &activations[l];
            let start = layer_starts[l];
            for i in 0..n_out {
                let g = g_z[i];
                let row = start + i * n_in;
                for j in 0..n_in {
                    grad[row + j] += g * input[j];
                }
                grad[start + n_out * n_in + i] += g;
            }
            if l > 0 {
                let mut g_prev = vec![0.0f64; n_in];
                for (i, &g) in g_z.iter().enumerate().take(n_out) {
                    let row = &self.weights[l][i * n_in..(i + 1) * n_in];
                    for j in 0..n_in {
                        g_prev[j] += g * row[j];
                    }
                }
                // ReLU gate: activations[l] is already rectified, so a zero
                // activation means a clamped (or exactly zero) pre-activation.
                for (gp, &a) in g_prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *gp = 0.0;
                    }
                }
                g_z = g_prev;
            }
        }
        Some((loss, grad))
    }

    fn flat_len(&self) -> usize {
        let dense: usize = (0..self.n_layers())
            .map(|l| self.weights[l].len() + self.biases[l].len())
            .sum();
        dense + self.class_weights.len()
    }

    pub fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        let mut cursor = 0;
        for l in 0..self.n_layers() {
            for v in self.weights[l].iter_mut() {
                *v -= lr * grad[cursor];
                cursor += 1;
            }
            for v in self.biases[l].iter_mut() {
                *v -= lr * grad[cursor];
                cursor += 1;
            }
        }
        for v in self.class_weights.iter_mut() {
            *v -= lr * grad[cursor];
            cursor += 1;
        }
    }

    /// Cast to a storage-precision model: Dense/ReLU chain, embedding head,
    /// trailing normalization. The class matrix stays with the trainer.
    pub fn to_model(&self) -> Model {
        let mut layers = Vec::new();
        let mut params = Vec::new();
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let is_head = l + 1 == self.n_layers();
            layers.push(LayerSpec::Dense {
                in_features: n_in,
                out_features: n_out,
                embedding_head: is_head,
            });
            params.push(LayerParams::Dense {
                weight: Tensor::new(
                    vec![n_out, n_in],
                    self.weights[l].iter().map(|&v| v as f32).collect(),
                )
                .expect("finite weights"),
                bias: Tensor::vector(self.biases[l].iter().map(|&v| v as f32).collect())
                    .expect("finite biases"),
            });
            if !is_head {
                layers.push(LayerSpec::Relu);
                params.push(LayerParams::None);
            }
        }
        layers.push(LayerSpec::L2Normalize);
        params.push(LayerParams::None);
        Model::new(DataShape::Vector { len: self.dims[0] }, layers, params)
            .expect("trainer chain is always valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    /// Mean per-sample loss of each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    /// Classification accuracy over the training set with final weights.
    pub final_train_accuracy: f64,
}

/// Train on a labeled dataset and return the embedding model.
pub fn train_toy_model(
    data: &SynthDataset,
    arch: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Model, SynthError> {
    train_toy_model_with_stats(data, arch, epochs, lr, seed).map(|(m, _)| m)
}

/// Train and also report per-epoch losses and final training accuracy.
pub fn train_toy_model_with_stats(
    data: &SynthDataset,
    arch: &[usize],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(Model, TrainStats), SynthError> {
    if data.is_empty() {
        return Err(SynthError::ConfigInvalid("dataset is empty".into()));
    }
    if arch.first() != Some(&data.input_dim()) {
        return Err(SynthError::UnsupportedArch(format!(
            "architecture expects input width {:?}, dataset provides {}",
            arch.first(),
            data.input_dim()
        )));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(SynthError::ConfigInvalid(format!("bad learning rate {lr}")));
    }
    let n_classes = data.n_classes();
    let mut net = TrainerNet::new(arch, n_classes, seed)?;
    let inputs: Vec<Vec<f64>> = data
        .samples
        .iter()
        .map(|s| s.input.data().iter().map(|&v| v as f64).collect())
        .collect();

    let mut shuffle_rng = Rng::from_seed(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.below((i + 1) as u64) as usize;
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        for &idx in &order {
            let sample = &data.samples[idx];
            let (loss, grad) = net
                .loss_and_grad(&inputs[idx], sample.label)
                .ok_or(SynthError::NonFiniteLoss { epoch })?;
            if !loss.is_finite() {
                return Err(SynthError::NonFiniteLoss { epoch });
            }
            net.sgd_step(&grad, lr);
            loss_sum += loss;
        }
        epoch_losses.push(loss_sum / data.len() as f64);
    }

    let mut correct = 0usize;
    for (idx, sample) in data.samples.iter().enumerate() {
        let logits = net
            .logits(&inputs[idx])
            .ok_or(SynthError::NonFiniteLoss { epoch: epochs })?;
        let mut best = 0usize;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        if best == sample.label {
            correct += 1;
        }
    }
    let stats = TrainStats {
        epoch_losses,
        final_train_accuracy: correct as f64 / data.len() as f64,
    };
    Ok((net.to_model(), stats))
}

/// Build a balanced verification protocol from a labeled dataset: every
/// same-identity pair is genuine, and `impostor_factor` times as many
/// distinct cross-identity pairs are drawn with the given seed.
pub fn build_verification_pairs(
    data: &SynthDataset,
    seed: u64,
    impostor_factor: f64,
) -> Result<crate::eval::PairList, SynthError> {
    use crate::eval::{PairList, PairRow};
    if data.len() < 2 {
        return Err(SynthError::ConfigInvalid(
            "need at least two samples for pairs".into(),
        ));
    }
    if impostor_factor <= 0.0 || !impostor_factor.is_finite() {
        return Err(SynthError::ConfigInvalid(format!(
            "impostor factor {impostor_factor} must be positive"
        )));
    }
    let mut rows = Vec::new();
    for i in 0..data.len() {
        for j in (i + 1)..data.len() {
            if data.samples[i].label == data.samples[j].label {
                rows.push(PairRow {
                    id_a: data.samples[i].id.clone(),
                    id_b: data.samples[j].id.clone(),
                    genuine: true,
                });
            }
        }
    }
    if rows.is_empty() {
        return Err(SynthError::ConfigInvalid(
            "no genuine pairs; every identity has a single sample".into(),
        ));
    }
    let target = ((rows.len() as f64) * impostor_factor).round() as usize;
    let mut rng = Rng::from_seed(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut impostors = Vec::with_capacity(target);
    let n = data.len() as u64;
    // Rejection-sample distinct cross-identity pairs; the pool is far larger
    // than the target for any sane configuration.
    let mut attempts = 0u64;
    let max_attempts = 1000 * target as u64 + 1000;
    while impostors.len() < target {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::ConfigInvalid(
                "cannot draw enough distinct impostor pairs".into(),
            ));
        }
        let i = rng.below(n) as usize;
        let j = rng.below(n) as usize;
        if i == j || data.samples[i].label == data.samples[j].label {
            continue;
        }
        let key = (i.min(j), i.max(j));
        if seen.insert(key) {
            impostors.push(PairRow {
                id_a: data.samples[key.0].id.clone(),
                id_b: data.samples[key.1].id.clone(),
                genuine: false,
            });
        }
    }
    rows.extend(impostors);
    Ok(PairList { rows })
}

// ---------------------------------------------------------------------------
// Job config: dataset + training in one file, as consumed by the CLI.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthJobConfig {
    #[serde(flatten)]
    pub data: SynthConfig,
    pub arch: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub train_seed: u64,
}

impl SynthJobConfig {
    /// The pinned experiment fixture every statistical check runs against.
    pub fn standard_fixture() -> Self {
        SynthJobConfig {
            data: SynthConfig {
                n_identities: 20,
                samples_per_identity: 40,
                input_dim: 32,
                embedding_dim: 16,
                noise_levels: vec![0.0, 0.25, 0.5, 1.0],
                seed: 7,
            },
            arch: vec![32, 64, 64, 16],
            epochs: 60,
            lr: 0.05,
            train_seed: 11,
        }
    }

    pub fn from_json(content: &str) -> Result<Self, SynthError> {
        let cfg: SynthJobConfig =
            serde_json::from_str(content).map_err(|e| SynthError::ConfigInvalid(e.to_string()))?;
        cfg.data.validate()?;
        if cfg.arch.first() != Some(&cfg.data.input_dim) {
            return Err(SynthError::ConfigInvalid(
                "arch must start at input_dim".into(),
            ));
        }
        if cfg.arch.last() != Some(&cfg.data.embedding_dim) {
            return Err(SynthError::ConfigInvalid(
                "arch must end at embedding_dim".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, SynthError> {
        let content = std::fs::read_to_string(path)?;
        Self::from_json(&content)
    }
}

// ---------------------------------------------------------------------------
// Dataset CSV: `id,label,sigma,x0..x{n-1}`.
// ---------------------------------------------------------------------------

pub fn write_dataset_csv<W: Write>(mut w: W, data: &SynthDataset) -> std::io::Result<()> {
    let dim = data.input_dim();
    write!(w, "id,label,sigma")?;
    for i in 0..dim {
        write!(w, ",x{i}")?;
    }
    w.write_all(b"\n")?;
    for s in &data.samples {
        write!(w, "{},{},{}", s.id, s.label, s.sigma)?;
        for &v in s.input.data() {
            write!(w, ",{}", format_f32(v))?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset_csv_file<P: AsRef<Path>>(path: P, data: &SynthDataset) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_dataset_csv(&mut buf, data)?;
    std::fs::write(path, buf)
}

pub fn read_dataset_csv(content: &str) -> Result<SynthDataset, SynthError> {
    let mut lines = content.lines();
    let header = lines
        .next()
        .ok_or_else(|| SynthError::Parse("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "label" || cols[2] != "sigma" {
        return Err(SynthError::Parse(format!("bad dataset header: {header}")));
    }
    let dim = cols.len() - 3;
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 3 {
            return Err(SynthError::Parse(format!(
                "line {}: expected {} fields",
                lineno + 2,
                dim + 3
            )));
        }
        let label: usize = parts[1]
            .parse()
            .map_err(|_| SynthError::Parse(format!("line {}: bad label", lineno + 2)))?;
        let sigma: f64 = parts[2]
            .parse()
            .map_err(|_| SynthError::Parse(format!("line {}: bad sigma", lineno + 2)))?;
        let mut values = Vec::with_capacity(dim);
        for raw in &parts[3..] {
            values.push(raw.parse::<f32>().map_err(|_| {
                SynthError::Parse(format!("line {}: bad float {raw}", lineno + 2))
            })?);
        }
        samples.push(SynthSample {
            id: parts[0].to_string(),
            input: NdArray::vector(values)
                .map_err(|e| SynthError::Parse(format!("line {}: {e}", lineno + 2)))?,
            label,
            sigma,
        });
    }
    Ok(SynthDataset { samples })
}

pub fn read_dataset_csv_file<P: AsRef<Path>>(path: P) -> Result<SynthDataset, SynthError> {
    let content = std::fs::read_to_string(path)?;
    read_dataset_csv(&content)
}
