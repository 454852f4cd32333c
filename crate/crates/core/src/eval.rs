//! Biometric verification evaluation: similarity scores, FMR-anchored
//! thresholds, FNMR, error-versus-discard curves, and their partial areas.
//!
//! The match rule is fixed as `score >= threshold` over cosine similarity.
//! An EDC curve fixes its threshold once from all impostor scores at zero
//! discard, then reports FNMR over the genuine pairs that survive as the
//! lowest-quality images are discarded; a pair survives only while both of
//! its images survive. Partial areas are raw trapezoids (no interval
//! normalization, no baseline subtraction), reported scaled by 10^3.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::scoring::format_f64;
use crate::tensor::NdArray;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("genuine score list is empty")]
    EmptyGenuine,
    #[error("impostor score list is empty")]
    EmptyImpostors,
    #[error("score lists are empty")]
    EmptyScores,
    #[error("no quality value for image {0}")]
    MissingQuality(String),
    #[error("no embedding for image {0}")]
    MissingEmbedding(String),
    #[error("discard grid is empty")]
    EmptyGrid,
    #[error("invalid discard grid: {0}")]
    InvalidGrid(String),
    #[error("curve ends at discard {last} but {requested} was requested and extension is disabled")]
    GridTooShort { last: f64, requested: f64 },
    #[error("embedding {id} has norm {norm}, not unit within 1e-5")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Labeled verification comparisons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRow {
    pub id_a: String,
    pub id_b: String,
    pub genuine: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairList {
    pub rows: Vec<PairRow>,
}

/// Unit embeddings keyed by image id. Insertion validates the norm.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dim: usize,
    map: BTreeMap<String, NdArray>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        EmbeddingSet {
            dim,
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: String, embedding: NdArray) -> Result<(), EvalError> {
        if embedding.len() != self.dim {
            return Err(EvalError::DimensionMismatch {
                left: self.dim,
                right: embedding.len(),
            });
        }
        let norm = embedding
            .data()
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(EvalError::NotUnitNorm { id, norm });
        }
        if self.map.contains_key(&id) {
            return Err(EvalError::DuplicateId(id));
        }
        self.map.insert(id, embedding);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&NdArray> {
        self.map.get(id)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NdArray)> {
        self.map.iter()
    }
}

/// 64-bit dot product of two unit embeddings.
pub fn cosine_similarity(a: &NdArray, b: &NdArray) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        acc += x as f64 * y as f64;
    }
    Ok(acc)
}

/// Threshold anchored at a target false-match rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FmrThreshold {
    /// Smallest candidate (a distinct score or the +inf sentinel) whose
    /// acceptance count stays within the target.
    pub threshold: f64,
    pub achieved_fmr: f64,
    /// True when `floor(fmr * n) == 0`: no threshold can admit any match,
    /// so the sentinel rejects everything.
    pub insufficient: bool,
    pub k: usize,
}

/// With match rule `score >= t`: find the smallest candidate `t` among the
/// distinct scores and the +inf sentinel with `count(scores >= t) <= k`,
/// `k = floor(fmr * n)`.
pub fn threshold_at_fmr(impostor_scores: &[f64], fmr: f64) -> Result<FmrThreshold, EvalError> {
    if impostor_scores.is_empty() {
        return Err(EvalError::EmptyImpostors);
    }
    let n = impostor_scores.len();
    let k = (fmr * n as f64).floor() as usize;
    let mut sorted = impostor_scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut threshold = f64::INFINITY;
    let mut accepted = 0usize;
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == v {
            j += 1;
        }
        let count_ge = j + 1;
        if count_ge <= k {
            threshold = v;
            accepted = count_ge;
            i = j + 1;
        } else {
            break;
        }
    }
    Ok(FmrThreshold {
        threshold,
        achieved_fmr: accepted as f64 / n as f64,
        insufficient: k == 0,
        k,
    })
}

/// Fraction of genuine scores rejected at a threshold.
pub fn fnmr_at_threshold(genuine_scores: &[f64], threshold: f64) -> Result<f64, EvalError> {
    if genuine_scores.is_empty() {
        return Err(EvalError::EmptyGenuine);
    }
    let rejected = genuine_scores.iter().filter(|&&s| s < threshold).count();
    Ok(rejected as f64 / genuine_scores.len() as f64)
}

/// Comparison scores resolved from a pair list, with member ids retained so
/// discards can be applied.
#[derive(Debug, Clone, Default)]
pub struct ScoredPairs {
    pub genuine: Vec<(String, String, f64)>,
    pub impostor: Vec<(String, String, f64)>,
}

impl ScoredPairs {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.genuine.iter().map(|(_, _, s)| *s).collect()
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.impostor.iter().map(|(_, _, s)| *s).collect()
    }
}

/// Resolve every pair against the embedding set and compute its similarity.
pub fn pair_scores(emb: &EmbeddingSet, pairs: &PairList) -> Result<ScoredPairs, EvalError> {
    let mut out = ScoredPairs::default();
    for row in &pairs.rows {
        let a = emb
            .get(&row.id_a)
            .ok_or_else(|| EvalError::MissingEmbedding(row.id_a.clone()))?;
        let b = emb
            .get(&row.id_b)
            .ok_or_else(|| EvalError::MissingEmbedding(row.id_b.clone()))?;
        let s = cosine_similarity(a, b)?;
        let entry = (row.id_a.clone(), row.id_b.clone(), s);
        if row.genuine {
            out.genuine.push(entry);
        } else {
            out.impostor.push(entry);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdcPoint {
    pub discard_fraction: f64,
    pub fnmr: f64,
    /// True when no genuine pair survived and the previous FNMR was carried.
    pub carried_forward: bool,
}

/// FNMR as a function of the fraction of lowest-quality images discarded,
/// at a threshold fixed from all impostor scores at zero discard.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdcCurve {
    pub fmr_target: f64,
    pub threshold: f64,
    pub achieved_fmr: f64,
    pub insufficient_impostors: bool,
    pub points: Vec<EdcPoint>,
    pub quality_source: String,
}

fn validate_grid(grid: &[f64]) -> Result<(), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if grid[0] != 0.0 {
        return Err(EvalError::InvalidGrid("grid must start at 0".into()));
    }
    for pair in grid.windows(2) {
        if pair[1] <= pair[0] {
            return Err(EvalError::InvalidGrid(
                "grid must be strictly increasing".into(),
            ));
        }
    }
    if grid.iter().any(|&d| !(0.0..1.0).contains(&d)) {
        return Err(EvalError::InvalidGrid(
            "discard fractions must lie in [0, 1)".into(),
        ));
    }
    Ok(())
}

/// Build an EDC curve from precomputed pair scores.
pub fn edc_curve_from_scores(
    scored: &ScoredPairs,
    qualities: &BTreeMap<String, f64>,
    fmr: f64,
    grid: &[f64],
    quality_source: &str,
) -> Result<EdcCurve, EvalError> {
    validate_grid(grid)?;
    if scored.genuine.is_empty() {
        return Err(EvalError::EmptyGenuine);
    }
    if scored.impostor.is_empty() {
        return Err(EvalError::EmptyImpostors);
    }

    // The image population is everything referenced by the pair list.
    let mut images: BTreeSet<&str> = BTreeSet::new();
    for (a, b, _) in scored.genuine.iter().chain(&scored.impostor) {
        images.insert(a);
        images.insert(b);
    }
    for &id in &images {
        if !qualities.contains_key(id) {
            return Err(EvalError::MissingQuality(id.to_string()));
        }
    }

    // Discard order: quality ascending, ties by ascending id.
    let mut order: Vec<&str> = images.iter().copied().collect();
    order.sort_by(|a, b| {
        qualities[*a]
            .partial_cmp(&qualities[*b])
            .unwrap()
            .then(a.cmp(b))
    });
    let rank: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let n_images = order.len();

    // A genuine pair dies as soon as either member is discarded, i.e. when
    // the discard count exceeds the smaller of the two ranks.
    let genuine: Vec<(usize, f64)> = scored
        .genuine
        .iter()
        .map(|(a, b, s)| (rank[a.as_str()].min(rank[b.as_str()]), *s))
        .collect();

    let anchor = threshold_at_fmr(&scored.impostor_scores(), fmr)?;

    let mut points: Vec<EdcPoint> = Vec::with_capacity(grid.len());
    for &fraction in grid {
        let n_discard = (fraction * n_images as f64).floor() as usize;
        let mut survivors = 0usize;
        let mut rejected = 0usize;
        for &(min_rank, score) in &genuine {
            if min_rank >= n_discard {
                survivors += 1;
                if score < anchor.threshold {
                    rejected += 1;
                }
            }
        }
        if survivors == 0 {
            let prev = points
                .last()
                .map(|p| p.fnmr)
                .expect("grid starts at 0 where at least one genuine pair survives");
            points.push(EdcPoint {
                discard_fraction: fraction,
                fnmr: prev,
                carried_forward: true,
            });
        } else {
            points.push(EdcPoint {
                discard_fraction: fraction,
                fnmr: rejected as f64 / survivors as f64,
                carried_forward: false,
            });
        }
    }

    Ok(EdcCurve {
        fmr_target: fmr,
        threshold: anchor.threshold,
        achieved_fmr: anchor.achieved_fmr,
        insufficient_impostors: anchor.insufficient,
        points,
        quality_source: quality_source.to_string(),
    })
}

/// Resolve pairs against embeddings, then build the EDC curve.
pub fn edc_curve(
    emb: &EmbeddingSet,
    pairs: &PairList,
    qualities: &BTreeMap<String, f64>,
    fmr: f64,
    grid: &[f64],
    quality_source: &str,
) -> Result<EdcCurve, EvalError> {
    let scored = pair_scores(emb, pairs)?;
    edc_curve_from_scores(&scored, qualities, fmr, grid, quality_source)
}

/// The default evaluation grid: discard fractions 0.00, 0.01, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (0..96).map(|i| i as f64 * 0.01).collect()
}

fn curve_value_at(points: &[EdcPoint], x: f64) -> f64 {
    debug_assert!(!points.is_empty());
    let last = points.len() - 1;
    if x >= points[last].discard_fraction {
        // Linear extension of the last segment (flat for single-point curves).
        if points.len() == 1 {
            return points[last].fnmr;
        }
        let a = &points[last - 1];
        let b = &points[last];
        let slope = (b.fnmr - a.fnmr) / (b.discard_fraction - a.discard_fraction);
        return b.fnmr + slope * (x - b.discard_fraction);
    }
    let mut i = 0;
    while points[i + 1].discard_fraction < x {
        i += 1;
    }
    let a = &points[i];
    let b = &points[i + 1];
    if x == a.discard_fraction {
        return a.fnmr;
    }
    let t = (x - a.discard_fraction) / (b.discard_fraction - a.discard_fraction);
    a.fnmr + t * (b.fnmr - a.fnmr)
}

/// Trapezoidal integral of the piecewise-linear FNMR curve over `[lo, hi]`.
/// With `extend` set, the last segment is extended linearly past the final
/// grid point; otherwise exceeding it is an error.
pub fn edc_integral(curve: &EdcCurve, lo: f64, hi: f64, extend: bool) -> Result<f64, EvalError> {
    if curve.points.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if !(0.0..=hi).contains(&lo) {
        return Err(EvalError::InvalidGrid(format!(
            "integration bounds [{lo}, {hi}] are not ordered and nonnegative"
        )));
    }
    let last = curve.points.last().unwrap().discard_fraction;
    if hi > last && !extend {
        return Err(EvalError::GridTooShort {
            last,
            requested: hi,
        });
    }
    // Integration nodes: the bounds plus every grid point strictly inside.
    let mut xs = vec![lo];
    for p in &curve.points {
        if p.discard_fraction > lo && p.discard_fraction < hi {
            xs.push(p.discard_fraction);
        }
    }
    xs.push(hi);
    let mut total = 0.0f64;
    for w in xs.windows(2) {
        let fa = curve_value_at(&curve.points, w[0]);
        let fb = curve_value_at(&curve.points, w[1]);
        total += (w[1] - w[0]) * (fa + fb) / 2.0;
    }
    Ok(total)
}

/// Raw partial area under the EDC curve over `[0, max_discard]`. Multiply by
/// 10^3 for the conventional reporting scale.
pub fn pauc(curve: &EdcCurve, max_discard: f64, extend: bool) -> Result<f64, EvalError> {
    edc_integral(curve, 0.0, max_discard, extend)
}

/// Best-threshold verification accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerificationAccuracy {
    pub accuracy: f64,
    /// Maximizing threshold; ties on accuracy prefer the larger margin to
    /// the nearest score, then the smaller threshold. May be infinite.
    pub threshold: f64,
}

/// Exhaustive scan over candidate thresholds (midpoints between adjacent
/// distinct scores plus the two infinite sentinels) maximizing
/// `(TP + TN) / (P + N)` under the `score >= t` match rule.
pub fn verification_accuracy(
    genuine_scores: &[f64],
    impostor_scores: &[f64],
) -> Result<VerificationAccuracy, EvalError> {
    if genuine_scores.is_empty() || impostor_scores.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let p = genuine_scores.len();
    let n = impostor_scores.len();
    let total = (p + n) as f64;

    let mut entries: Vec<(f64, bool)> = genuine_scores
        .iter()
        .map(|&s| (s, true))
        .chain(impostor_scores.iter().map(|&s| (s, false)))
        .collect();
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let mut best = VerificationAccuracy {
        accuracy: f64::NEG_INFINITY,
        threshold: f64::INFINITY,
    };
    let mut best_margin = f64::NEG_INFINITY;
    let mut consider = |accuracy: f64, threshold: f64, margin: f64| {
        let better = accuracy > best.accuracy
            || (accuracy == best.accuracy
                && (margin > best_margin
                    || (margin == best_margin && threshold < best.threshold)));
        if better {
            best = VerificationAccuracy {
                accuracy,
                threshold,
            };
            best_margin = margin;
        }
    };

    // Threshold above every score: accept nothing.
    let mut tp = 0usize;
    let mut tn = n;
    consider(tn as f64 / total, f64::INFINITY, f64::INFINITY);

    let mut i = 0;
    while i < entries.len() {
        let v = entries[i].0;
        let mut j = i;
        while j < entries.len() && entries[j].0 == v {
            if entries[j].1 {
                tp += 1;
            } else {
                tn -= 1;
            }
            j += 1;
        }
        let accuracy = (tp + tn) as f64 / total;
        if j < entries.len() {
            let next = entries[j].0;
            consider(accuracy, (v + next) / 2.0, (v - next) / 2.0);
        } else {
            // Below every score: accept everything.
            consider(accuracy, f64::NEG_INFINITY, f64::INFINITY);
        }
        i = j;
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// CSV formats.
// ---------------------------------------------------------------------------

/// Format an f32 with 9 significant digits (exact f32 round-trip).
pub fn format_f32(v: f32) -> String {
    format!("{v:.8e}")
}

pub fn write_pairs_csv<W: Write>(mut w: W, pairs: &PairList) -> std::io::Result<()> {
    w.write_all(b"id_a,id_b,genuine\n")?;
    for row in &pairs.rows {
        writeln!(
            w,
            "{},{},{}",
            row.id_a,
            row.id_b,
            if row.genuine { 1 } else { 0 }
        )?;
    }
    Ok(())
}

pub fn read_pairs_csv(content: &str) -> Result<PairList, EvalError> {
    let mut lines = content.lines();
    match lines.next() {
        Some("id_a,id_b,genuine") => {}
        other => return Err(EvalError::Parse(format!("bad pairs header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(EvalError::Parse(format!(
                "line {}: expected 3 fields",
                lineno + 2
            )));
        }
        let genuine = match parts[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(EvalError::Parse(format!(
                    "line {}: genuine must be 0 or 1, got {other}",
                    lineno + 2
                )))
            }
        };
        rows.push(PairRow {
            id_a: parts[0].to_string(),
            id_b: parts[1].to_string(),
            genuine,
        });
    }
    Ok(PairList { rows })
}

pub fn write_embeddings_csv<W: Write>(mut w: W, emb: &EmbeddingSet) -> std::io::Result<()> {
    write!(w, "id")?;
    for i in 0..emb.dim() {
        write!(w, ",v{i}")?;
    }
    w.write_all(b"\n")?;
    for (id, e) in emb.iter() {
        write!(w, "{id}")?;
        for &v in e.data() {
            write!(w, ",{}", format_f32(v))?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_embeddings_csv(content: &str) -> Result<EmbeddingSet, EvalError> {
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| EvalError::Parse("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "id" {
        return Err(EvalError::Parse(format!("bad embeddings header: {header}")));
    }
    for (i, c) in cols[1..].iter().enumerate() {
        if *c != format!("v{i}") {
            return Err(EvalError::Parse(format!("bad embeddings header column {c}")));
        }
    }
    let dim = cols.len() - 1;
    let mut set = EmbeddingSet::new(dim);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != dim + 1 {
            return Err(EvalError::Parse(format!(
                "line {}: expected {} fields",
                lineno + 2,
                dim + 1
            )));
        }
        let mut values = Vec::with_capacity(dim);
        for raw in &parts[1..] {
            let v: f32 = raw
                .parse()
                .map_err(|_| EvalError::Parse(format!("line {}: bad float {raw}", lineno + 2)))?;
            values.push(v);
        }
        let embedding = NdArray::vector(values)
            .map_err(|e| EvalError::Parse(format!("line {}: {e}", lineno + 2)))?;
        set.insert(parts[0].to_string(), embedding)?;
    }
    Ok(set)
}

pub fn write_edc_csv<W: Write>(mut w: W, curve: &EdcCurve) -> std::io::Result<()> {
    w.write_all(b"discard_fraction,fnmr\n")?;
    for p in &curve.points {
        writeln!(w, "{},{}", format_f64(p.discard_fraction), format_f64(p.fnmr))?;
    }
    Ok(())
}

pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<String, EvalError> {
    Ok(std::fs::read_to_string(path)?)
}
