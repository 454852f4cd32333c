//! Per-sample drift between an original and a pruned model, and its
//! rescaling to a utility score.
//!
//! Drift is the Euclidean distance between the two unit-norm embeddings of
//! the same input, accumulated in 64-bit from the 32-bit embedding values.
//! Because both embeddings lie on the unit hypersphere the distance lives in
//! `[0, 2]`; quality is the linear rescaling `Q = 1 - D/2`, and
//! `D^2 = 2 - 2 cos(angle)` relates drift to the angular deviation.

use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError};
use crate::pruning::{Criterion, Granularity};
use crate::tensor::NdArray;

/// Slack above the theoretical bound of 2 tolerated before a drift value is
/// treated as evidence of broken normalization.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Count of drift values in `(2, 2 + tolerance]` that were clamped to 2.
static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// Number of drift clamps since process start. Nonzero values are benign
/// rounding at the antipodal bound; large counts indicate a broken model.
pub fn drift_clamp_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("drift {0} outside [0, 2] beyond tolerance")]
    DriftOutOfRange(f64),
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Provenance of the pruning configuration a score was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreProvenance {
    pub rho: f64,
    pub criterion: Criterion,
    pub granularity: Granularity,
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: String,
    /// Euclidean drift between original and pruned embeddings, in `[0, 2]`.
    pub drift: f64,
    /// Utility score `1 - drift/2`, in `[0, 1]`.
    pub quality: f64,
    pub provenance: ScoreProvenance,
}

/// Outcome for one sample of a batch; failures are isolated per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScore {
    pub sample_id: String,
    pub outcome: Result<ScoreRecord, ScoreError>,
}

/// Euclidean distance between two unit embeddings, 64-bit accumulation.
/// Values in `(2, 2 + tolerance]` clamp to 2 (counted); anything larger is
/// an error.
pub fn embedding_drift(a: &NdArray, b: &NdArray) -> Result<f64, ScoreError> {
    if a.len() != b.len() {
        return Err(ScoreError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut sum_sq = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        sum_sq += d * d;
    }
    let drift = sum_sq.sqrt();
    if drift > 2.0 + DRIFT_TOLERANCE {
        return Err(ScoreError::DriftOutOfRange(drift));
    }
    if drift > 2.0 {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        return Ok(2.0);
    }
    Ok(drift)
}

/// Drift of one input under pruning: forward through both models, then the
/// embedding distance.
pub fn drift(original: &Model, pruned: &Model, x: &NdArray) -> Result<f64, ScoreError> {
    if original.embedding_dim() != pruned.embedding_dim() {
        return Err(ScoreError::DimensionMismatch {
            left: original.embedding_dim(),
            right: pruned.embedding_dim(),
        });
    }
    let e_orig = original.forward(x)?;
    let e_pruned = pruned.forward(x)?;
    embedding_drift(&e_orig, &e_pruned)
}

/// Linear rescaling of drift to a utility score in `[0, 1]`; strictly
/// decreasing in the drift.
pub fn quality(drift: f64) -> Result<f64, ScoreError> {
    if !(0.0..=2.0 + DRIFT_TOLERANCE).contains(&drift) {
        return Err(ScoreError::DriftOutOfRange(drift));
    }
    Ok(1.0 - drift.min(2.0) / 2.0)
}

/// Cosine of the angle between the two embeddings implied by a drift value:
/// `cos = 1 - D^2 / 2`, in `[-1, 1]`.
pub fn angle_cosine_from_drift(drift: f64) -> Result<f64, ScoreError> {
    if !(0.0..=2.0).contains(&drift) {
        return Err(ScoreError::DriftOutOfRange(drift));
    }
    Ok(1.0 - drift * drift / 2.0)
}

/// Score a batch of samples. Output order equals input order and results are
/// bit-identical regardless of worker-thread count; per-sample errors are
/// collected rather than aborting the batch.
pub fn batch_score(
    original: &Model,
    pruned: &Model,
    samples: &[(String, NdArray)],
    provenance: ScoreProvenance,
) -> Result<Vec<SampleScore>, ScoreError> {
    if samples.is_empty() {
        return Err(ScoreError::EmptySampleSet);
    }
    if original.embedding_dim() != pruned.embedding_dim() {
        return Err(ScoreError::DimensionMismatch {
            left: original.embedding_dim(),
            right: pruned.embedding_dim(),
        });
    }
    Ok(samples
        .par_iter()
        .map(|(id, x)| {
            let outcome = drift(original, pruned, x).and_then(|d| {
                Ok(ScoreRecord {
                    sample_id: id.clone(),
                    drift: d,
                    quality: quality(d)?,
                    provenance,
                })
            });
            SampleScore {
                sample_id: id.clone(),
                outcome,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Scores CSV: header `sample_id,drift,quality`, 17-significant-digit floats,
// LF line endings.
// ---------------------------------------------------------------------------

/// Format a float with 17 significant decimal digits (exact f64 round-trip).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_scores_csv<W: Write>(mut w: W, records: &[ScoreRecord]) -> std::io::Result<()> {
    w.write_all(b"sample_id,drift,quality\n")?;
    for r in records {
        writeln!(
            w,
            "{},{},{}",
            r.sample_id,
            format_f64(r.drift),
            format_f64(r.quality)
        )?;
    }
    Ok(())
}

pub fn write_scores_csv_file<P: AsRef<Path>>(
    path: P,
    records: &[ScoreRecord],
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, records)?;
    std::fs::write(path, buf)
}

/// A parsed scores row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    pub drift: f64,
    pub quality: f64,
}

pub fn read_scores_csv(content: &str) -> Result<Vec<ScoreRow>, String> {
    let mut lines = content.lines();
    match lines.next() {
        Some("sample_id,drift,quality") => {}
        other => return Err(format!("bad scores header: {other:?}")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| format!("line {}: missing id", lineno + 2))?;
        let drift: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("line {}: bad drift", lineno + 2))?;
        let quality: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("line {}: bad quality", lineno + 2))?;
        if parts.next().is_some() {
            return Err(format!("line {}: too many fields", lineno + 2));
        }
        rows.push(ScoreRow {
            sample_id: id.to_string(),
            drift,
            quality,
        });
    }
    Ok(rows)
}

pub fn read_scores_csv_file<P: AsRef<Path>>(path: P) -> Result<Vec<ScoreRow>, String> {
    let content = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    read_scores_csv(&content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataShape, LayerParams, LayerSpec};
    use crate::pruning::PruneMask;
    use crate::tensor::Tensor;

    fn unit(data: &[f32]) -> NdArray {
        NdArray::vector(data.to_vec()).unwrap()
    }

    fn provenance() -> ScoreProvenance {
        ScoreProvenance {
            rho: 0.4,
            criterion: Criterion::L1Magnitude,
            granularity: Granularity::Unstructured,
        }
    }

    fn dense_model(w: Vec<f32>) -> Model {
        Model::new(
            DataShape::Vector { len: 2 },
            vec![
                LayerSpec::Dense {
                    in_features: 2,
                    out_features: 2,
                    embedding_head: true,
                },
                LayerSpec::L2Normalize,
            ],
            vec![
                LayerParams::Dense {
                    weight: Tensor::new(vec![2, 2], w).unwrap(),
                    bias: Tensor::vector(vec![0.0, 0.0]).unwrap(),
                },
                LayerParams::None,
            ],
        )
        .unwrap()
    }

    #[test]
    fn identical_models_have_zero_drift() {
        let m = dense_model(vec![0.3, -1.0, 0.8, 0.4]);
        let pruned = m.apply_mask(&PruneMask::identity(6)).unwrap();
        let d = drift(&m, &pruned, &unit(&[1.0, 2.0])).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn antipodal_embeddings_drift_two() {
        let d = embedding_drift(&unit(&[1.0, 0.0]), &unit(&[-1.0, 0.0])).unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn orthogonal_embeddings_drift_sqrt_two() {
        let d = embedding_drift(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn quality_endpoints() {
        assert_eq!(quality(0.0).unwrap(), 1.0);
        assert_eq!(quality(2.0).unwrap(), 0.0);
        let q = quality(std::f64::consts::SQRT_2).unwrap();
        assert!((q - 0.292_893_22).abs() < 1e-8);
        assert!(matches!(
            quality(2.1),
            Err(ScoreError::DriftOutOfRange(_))
        ));
        assert!(matches!(
            quality(-0.1),
            Err(ScoreError::DriftOutOfRange(_))
        ));
    }

    #[test]
    fn angle_cosine_plug_ins() {
        assert_eq!(angle_cosine_from_drift(0.0).unwrap(), 1.0);
        assert_eq!(angle_cosine_from_drift(1.0).unwrap(), 0.5);
        assert_eq!(angle_cosine_from_drift(2.0).unwrap(), -1.0);
        assert!(angle_cosine_from_drift(2.5).is_err());
    }

    #[test]
    fn batch_preserves_order_and_isolates_errors() {
        let m = dense_model(vec![0.3, -1.0, 0.8, 0.4]);
        let pruned = m.apply_mask(&PruneMask::identity(6)).unwrap();
        let samples = vec![
            ("a".to_string(), unit(&[1.0, 0.0])),
            ("bad".to_string(), unit(&[1.0, 0.0, 0.0])), // wrong shape
            ("c".to_string(), unit(&[0.0, 1.0])),
        ];
        let out = batch_score(&m, &pruned, &samples, provenance()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].sample_id, "a");
        assert_eq!(out[1].sample_id, "bad");
        assert_eq!(out[2].sample_id, "c");
        let rec = out[0].outcome.as_ref().unwrap();
        assert_eq!(rec.drift, 0.0);
        assert_eq!(rec.quality, 1.0);
        assert!(out[1].outcome.is_err());
        assert!(out[2].outcome.is_ok());
    }

    #[test]
    fn batch_rejects_empty_input() {
        let m = dense_model(vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            batch_score(&m, &m, &[], provenance()),
            Err(ScoreError::EmptySampleSet)
        ));
    }

    #[test]
    fn quality_equals_one_minus_half_drift_exactly() {
        for d in [0.0, 0.125, 0.5, 1.0, 1.75, 2.0] {
            assert_eq!(quality(d).unwrap(), 1.0 - d / 2.0);
        }
    }

    #[test]
    fn scores_csv_golden_bytes() {
        let records = vec![ScoreRecord {
            sample_id: "s1".into(),
            drift: 0.5,
            quality: 0.75,
            provenance: provenance(),
        }];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "sample_id,drift,quality\ns1,5.0000000000000000e-1,7.5000000000000000e-1\n"
        );
        let rows = read_scores_csv(&text).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].drift, 0.5);
        assert_eq!(rows[0].quality, 0.75);
    }

    #[test]
    fn csv_roundtrip_is_exact_for_awkward_floats() {
        let values = [1.0 / 3.0, 2.0_f64.sqrt() - 0.4, f64::MIN_POSITIVE, 1.999_999_999_9];
        for &v in &values {
            let s = format_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{s}");
        }
    }
}
