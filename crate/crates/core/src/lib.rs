//! Pruning-induced embedding drift as an unsupervised image-utility score.
//!
//! The toolkit prunes a feed-forward embedding network, measures per-sample
//! representation drift between the original and sparsified models, checks
//! the drift against a first-order directional-derivative estimate, and
//! evaluates the resulting utility scores with the standard biometric
//! error-versus-discard protocol. Everything is deterministic: seeded
//! generators are pinned, reductions have fixed order, and identical inputs
//! produce bit-identical outputs regardless of thread count.

pub mod eval;
pub mod jvp;
pub mod model;
pub mod pfqm;
pub mod pruning;
pub mod rng;
pub mod scoring;
pub mod stats;
pub mod synthlab;
pub mod tensor;
pub mod testkit;

pub use eval::{
    cosine_similarity, edc_curve, fnmr_at_threshold, pauc, threshold_at_fmr,
    verification_accuracy, EdcCurve, EmbeddingSet, EvalError, PairList, PairRow,
};
pub use jvp::{delta_theta, jvp_norm, validate_first_order, JvpError, PerturbationVector};
pub use model::{DataShape, LayerParams, LayerSpec, Model, ModelError, ParamView};
pub use pfqm::{load_model, save_model, FormatError};
pub use pruning::{
    apply_structured, build_mask_l1_global, build_mask_random, build_structured_plan, sparsity,
    Criterion, Granularity, PruneError, PruneMask, StructuredPlan,
};
pub use rng::Rng;
pub use scoring::{
    batch_score, drift, quality, ScoreError, ScoreProvenance, ScoreRecord, SampleScore,
};
pub use synthlab::{
    generate_dataset, train_toy_model, SynthConfig, SynthDataset, SynthError, SynthJobConfig,
};
pub use tensor::{NdArray, Tensor, TensorError};
