//! Prototype affinity scoring and the threshold split of the auxiliary pool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{json_hash, Checkpoint};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Network;
use crate::scalar::Scalar;
use crate::scenarios::{LabeledExample, Origin, TrainingView};

pub const COSINE_EPS: f64 = 1e-8;
const EMBED_CHUNK: usize = 128;

/// Per-class mean embedding of the labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub vectors: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

impl PrototypeSet {
    pub fn num_classes(&self) -> usize {
        self.vectors.len()
    }

    /// Mean embedding per class from row-wise embeddings and their labels.
    pub fn from_embeddings(embeddings: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::InvalidArgument("one label per embedding required".into()));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        let mut vectors = vec![vec![0.0; dim]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (e, &y) in embeddings.iter().zip(labels) {
            if y >= num_classes {
                return Err(Error::InvalidArgument(format!("label {y} outside {num_classes} classes")));
            }
            counts[y] += 1;
            vectors[y].iter_mut().zip(e).for_each(|(s, v)| *s += v);
        }
        for (k, (v, &n)) in vectors.iter_mut().zip(&counts).enumerate() {
            if n == 0 {
                return Err(Error::EmptyClass(k.to_string()));
            }
            v.iter_mut().for_each(|s| *s /= n as f64);
            if v.iter().any(|s| !s.is_finite()) {
                return Err(Error::NumericalFault { location: format!("prototype {k}"), detail: "non-finite mean".into() });
            }
        }
        Ok(Self { vectors, counts })
    }
}

/// Row-wise embeddings of `images`, widened to `f64`.
pub fn embed_images<T: Scalar>(net: &Network, params: &[T], images: &[&Image]) -> Result<Vec<Vec<f64>>> {
    let e = net.embedding_dim();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EMBED_CHUNK) {
        let flat = net.embed(params, chunk)?;
        out.extend(flat.chunks_exact(e).map(|row| row.iter().map(|v| v.as_f64()).collect::<Vec<f64>>()));
    }
    Ok(out)
}

pub fn compute_prototypes<T: Scalar>(net: &Network, params: &[T], labeled: &[LabeledExample], num_classes: usize) -> Result<PrototypeSet> {
    let images: Vec<&Image> = labeled.iter().map(|e| &e.image).collect();
    let labels: Vec<usize> = labeled.iter().map(|e| e.label).collect();
    PrototypeSet::from_embeddings(&embed_images(net, params, &images)?, &labels, num_classes)
}

/// `<u, v> / (|u| |v| + eps)`.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    dot / (norm(u) * norm(v) + COSINE_EPS)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityRecord {
    pub sample_index: usize,
    pub score: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolScores {
    pub records: Vec<AffinityRecord>,
    /// Embeddings with zero norm, scored at the minimum affinity.
    pub zero_norm_embeddings: usize,
}

/// Maximum cosine similarity of each embedding to any prototype.
pub fn score_embeddings(embeddings: &[Vec<f64>], prototypes: &PrototypeSet) -> Result<PoolScores> {
    if let Some(k) = prototypes.vectors.iter().position(|h| norm(h) == 0.0) {
        return Err(Error::DegeneratePrototype(k));
    }
    let mut zero = 0;
    let records = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let score = if norm(e) == 0.0 {
                zero += 1;
                -1.0
            } else {
                prototypes.vectors.iter().map(|h| cosine(e, h)).fold(f64::NEG_INFINITY, f64::max).clamp(-1.0, 1.0)
            };
            AffinityRecord { sample_index: i, score, selected: false }
        })
        .collect();
    if zero > 0 {
        log::warn!("{zero} auxiliary embeddings had zero norm and were scored -1");
    }
    Ok(PoolScores { records, zero_norm_embeddings: zero })
}

pub fn score_pool<T: Scalar>(net: &Network, params: &[T], prototypes: &PrototypeSet, pool: &[&Image]) -> Result<PoolScores> {
    score_embeddings(&embed_images(net, params, pool)?, prototypes)
}

/// Prototypes and pool scores from the EMA encoder of a pretext checkpoint.
pub fn score_checkpoint(checkpoint: &Checkpoint<f32>, view: &TrainingView<'_>) -> Result<(PrototypeSet, PoolScores)> {
    let net = checkpoint.network()?;
    let protos = compute_prototypes(&net, &checkpoint.ema, view.labeled, view.num_classes)?;
    let scores = score_pool(&net, &checkpoint.ema, &protos, &view.auxiliary)?;
    Ok((protos, scores))
}

/// `threshold = score_mean + beta * score_std`; `score_std` is the population deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityStats {
    pub score_mean: f64,
    pub score_std: f64,
    pub beta: f64,
    pub threshold: f64,
}

impl AffinityStats {
    pub fn from_scores(scores: &[f64], beta: f64) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::TooFewRecords { needed: 2, found: scores.len() });
        }
        let n = scores.len() as f64;
        let score_mean = scores.iter().sum::<f64>() / n;
        let score_std = (scores.iter().map(|s| (s - score_mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(Self { score_mean, score_std, beta, threshold: Self::threshold_for(score_mean, score_std, beta) })
    }

    pub fn threshold_for(mean: f64, std: f64, beta: f64) -> f64 {
        mean + beta * std
    }
}

/// Frozen partition of the auxiliary pool into selection and regularization sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSplit {
    pub pool_size: usize,
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<AffinityStats>,
}

impl PoolSplit {
    /// Every sample in the selection set: no masking.
    pub fn all_positive(pool_size: usize) -> Self {
        Self { pool_size, positive: (0..pool_size).collect(), negative: Vec::new(), stats: None }
    }

    /// Auxiliary data unused.
    pub fn empty() -> Self {
        Self { pool_size: 0, positive: Vec::new(), negative: Vec::new(), stats: None }
    }

    pub fn hash(&self) -> String {
        json_hash(&(self.pool_size, &self.positive, &self.negative))
    }

    /// Whether the two index sets partition `0..pool_size`.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.pool_size];
        for &i in self.positive.iter().chain(&self.negative) {
            if i >= self.pool_size || std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
        seen.iter().all(|&s| s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub split: PoolSplit,
    pub records: Vec<AffinityRecord>,
    pub stats: AffinityStats,
    /// All scores identical, so `beta` has no effect on the threshold.
    pub degenerate: bool,
}

/// Select samples with `score >= mean + beta * std`; ties go to the selection set.
pub fn split_pool(records: &[AffinityRecord], beta: f64) -> Result<SplitOutcome> {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let stats = AffinityStats::from_scores(&scores, beta)?;
    let mut out = records.to_vec();
    let (mut positive, mut negative) = (Vec::new(), Vec::new());
    for r in &mut out {
        r.selected = r.score >= stats.threshold;
        if r.selected { positive.push(r.sample_index) } else { negative.push(r.sample_index) }
    }
    let degenerate = stats.score_std == 0.0 && beta != 0.0;
    if degenerate {
        log::warn!("all affinity scores are identical; beta {beta} cannot move the threshold");
    }
    let split = PoolSplit { pool_size: records.len(), positive, negative, stats: Some(stats) };
    if !split.is_partition() {
        return Err(Error::InvalidArgument("affinity records must index the pool exactly once".into()));
    }
    Ok(SplitOutcome { split, records: out, stats, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginSummary {
    pub origin: Origin,
    pub count: usize,
    pub selected: usize,
    pub mean_score: Option<f64>,
}

/// Score counts per origin over equal-width bins on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<(Origin, Vec<usize>)>,
}

pub const HISTOGRAM_BINS: usize = 20;

impl ScoreHistogram {
    pub fn build(records: &[AffinityRecord], origins: &[Origin], bins: usize) -> Self {
        let edges: Vec<f64> = (0..=bins).map(|b| -1.0 + 2.0 * b as f64 / bins as f64).collect();
        let counts = Origin::ALL
            .iter()
            .map(|&o| {
                let mut c = vec![0usize; bins];
                for r in records.iter().filter(|r| origins[r.sample_index] == o) {
                    let b = (((r.score + 1.0) / 2.0 * bins as f64).floor() as isize).clamp(0, bins as isize - 1);
                    c[b as usize] += 1;
                }
                (o, c)
            })
            .collect();
        Self { edges, counts }
    }
}

/// Separation of shared-origin samples from the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingReport {
    pub auroc: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub selected: usize,
    pub total: usize,
    pub per_origin: Vec<OriginSummary>,
    pub histogram: ScoreHistogram,
    pub notes: Vec<String>,
}

/// Probability that a random positive outscores a random negative, ties counting half.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> Option<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return None;
    }
    // rank-sum with midranks for ties
    let mut all: Vec<(f64, bool)> = positives.iter().map(|&s| (s, true)).chain(negatives.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (p, n) = (positives.len() as f64, negatives.len() as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn masking_report(records: &[AffinityRecord], origins: &[Origin]) -> Result<MaskingReport> {
    if records.iter().any(|r| r.sample_index >= origins.len()) {
        return Err(Error::InvalidArgument("affinity record indexes past the origin list".into()));
    }
    let origin = |r: &AffinityRecord| origins[r.sample_index];
    let shared: Vec<f64> = records.iter().filter(|r| origin(r) == Origin::Shared).map(|r| r.score).collect();
    let rest: Vec<f64> = records.iter().filter(|r| origin(r) != Origin::Shared).map(|r| r.score).collect();
    let selected = records.iter().filter(|r| r.selected).count();
    let true_pos = records.iter().filter(|r| r.selected && origin(r) == Origin::Shared).count();
    let mut notes = Vec::new();
    let auroc = auroc(&shared, &rest);
    if shared.is_empty() {
        notes.push("no shared-class samples in the pool: AUROC undefined".to_string());
    } else if rest.is_empty() {
        notes.push("every sample is shared-class: AUROC undefined".to_string());
    }
    let precision = if selected == 0 {
        notes.push("selection set is empty: precision undefined".to_string());
        None
    } else {
        Some(true_pos as f64 / selected as f64)
    };
    let recall = (!shared.is_empty()).then(|| true_pos as f64 / shared.len() as f64);
    let per_origin = Origin::ALL
        .iter()
        .map(|&o| {
            let rs: Vec<&AffinityRecord> = records.iter().filter(|r| origin(r) == o).collect();
            OriginSummary {
                origin: o,
                count: rs.len(),
                selected: rs.iter().filter(|r| r.selected).count(),
                mean_score: (!rs.is_empty()).then(|| rs.iter().map(|r| r.score).sum::<f64>() / rs.len() as f64),
            }
        })
        .collect();
    Ok(MaskingReport {
        auroc,
        precision,
        recall,
        selected,
        total: records.len(),
        per_origin,
        histogram: ScoreHistogram::build(records, origins, HISTOGRAM_BINS),
        notes,
    })
}

/// Provenance stored beside a scores file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeta {
    pub scenario_hash: String,
    pub checkpoint_hash: String,
    pub stats: AffinityStats,
    pub zero_norm_embeddings: usize,
    pub split_hash: String,
    pub pool_size: usize,
}

pub fn meta_path(scores: &Path) -> PathBuf {
    let mut s = scores.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write `sample_index,score,selected[,origin]` rows plus the provenance sidecar.
pub fn write_scores(path: &Path, records: &[AffinityRecord], origins: Option<&[Origin]>, meta: &ScoreMeta) -> Result<()> {
    let mut out = String::from("sample_index,score,selected");
    if origins.is_some() {
        out.push_str(",origin");
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.sample_index, r.score, r.selected).expect("string write");
        if let Some(o) = origins {
            let o = o.get(r.sample_index).ok_or_else(|| Error::InvalidArgument("origin list shorter than pool".into()))?;
            write!(out, ",{}", o.as_str()).expect("string write");
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    let meta_file = meta_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(&meta_file, json).map_err(|e| Error::io(&meta_file, e))
}

/// Read a scores file and its sidecar, rebuilding the split and checking its hash.
pub fn read_scores(path: &Path) -> Result<(Vec<AffinityRecord>, PoolSplit, ScoreMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::corrupt(path, "empty scores file"))?;
    if !header.starts_with("sample_index,score,selected") {
        return Err(Error::corrupt(path, "unexpected header"));
    }
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let mut cols = line.split(',');
        let bad = || Error::corrupt(path, format!("malformed row {}", n + 2));
        let sample_index = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let score = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let selected = cols.next().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        records.push(AffinityRecord { sample_index, score, selected });
    }
    let meta_file = meta_path(path);
    let meta_text = std::fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: ScoreMeta = serde_json::from_str(&meta_text).map_err(|e| Error::corrupt(&meta_file, e.to_string()))?;
    let (mut positive, mut negative) = (Vec::new(), Vec::new());
    for r in &records {
        if r.selected != (r.score >= meta.stats.threshold) {
            return Err(Error::corrupt(path, format!("sample {} selection disagrees with threshold", r.sample_index)));
        }
        if r.selected { positive.push(r.sample_index) } else { negative.push(r.sample_index) }
    }
    positive.sort_unstable();
    negative.sort_unstable();
    let split = PoolSplit { pool_size: records.len(), positive, negative, stats: Some(meta.stats) };
    if !split.is_partition() {
        return Err(Error::corrupt(path, "scores do not cover the pool exactly once"));
    }
    let found = split.hash();
    if found != meta.split_hash {
        return Err(Error::HashMismatch { what: "split".into(), expected: meta.split_hash.clone(), found });
    }
    Ok((records, split, meta))
}

/// The optional origin column of a scores file, in row order.
pub fn read_score_origins(path: &Path) -> Result<Option<Vec<Origin>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("sample_index,score,selected,origin") {
        return Ok(None);
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            line.rsplit(',').next().and_then(Origin::parse).ok_or_else(|| Error::corrupt(path, format!("bad origin in row {}", n + 2)))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};

    fn protos(v: Vec<Vec<f64>>) -> PrototypeSet {
        let counts = vec![1; v.len()];
        PrototypeSet { vectors: v, counts }
    }

    fn recs(scores: &[f64]) -> Vec<AffinityRecord> {
        scores.iter().enumerate().map(|(i, &score)| AffinityRecord { sample_index: i, score, selected: false }).collect()
    }

    #[test]
    fn prototypes_are_class_means() {
        let e = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5], vec![1.0, -0.5]];
        let p = PrototypeSet::from_embeddings(&e, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(p.vectors, vec![vec![2.0, 3.0], vec![0.0, 0.0]]);
        assert_eq!(p.counts, vec![2, 2]);
        let single = PrototypeSet::from_embeddings(&e[..1], &[0], 1).unwrap();
        assert_eq!(single.vectors[0], e[0]);
    }

    #[test]
    fn prototypes_match_sample_by_sample_accumulation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let e: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..30).map(|i| (i * 7) % 3).collect();
        let p = PrototypeSet::from_embeddings(&e, &labels, 3).unwrap();
        for k in 0..3 {
            let members: Vec<&Vec<f64>> = e.iter().zip(&labels).filter(|(_, &y)| y == k).map(|(v, _)| v).collect();
            for d in 0..5 {
                let mut s = 0.0;
                for m in &members {
                    s += m[d];
                }
                assert!((p.vectors[k][d] - s / members.len() as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_class_is_named() {
        let e = vec![vec![1.0], vec![2.0]];
        assert!(matches!(PrototypeSet::from_embeddings(&e, &[0, 2], 3), Err(Error::EmptyClass(k)) if k == "1"));
    }

    #[test]
    fn self_and_orthogonal_similarity() {
        let p = protos(vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]);
        let s = score_embeddings(&[vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]], &p).unwrap();
        assert!((s.records[0].score - 1.0).abs() < 1e-8);
        assert_eq!(s.records[1].score, 0.0);
    }

    #[test]
    fn scores_match_exhaustive_pairs_and_ignore_scale() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut v = || (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let p = protos(vec![v(), v(), v()]);
        let pool: Vec<Vec<f64>> = (0..20).map(|_| v()).collect();
        let s = score_embeddings(&pool, &p).unwrap();
        for (i, e) in pool.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for h in &p.vectors {
                let dot: f64 = e.iter().zip(h).map(|(a, b)| a * b).sum();
                let ne = e.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nh = h.iter().map(|a| a * a).sum::<f64>().sqrt();
                best = best.max(dot / (ne * nh + 1e-8));
            }
            assert!((s.records[i].score - best).abs() < 1e-12);
        }
        let doubled = protos(p.vectors.iter().map(|h| h.iter().map(|x| 2.0 * x).collect()).collect());
        let pool2: Vec<Vec<f64>> = pool.iter().map(|e| e.iter().map(|x| 2.0 * x).collect()).collect();
        let s2 = score_embeddings(&pool2, &doubled).unwrap();
        for (a, b) in s.records.iter().zip(&s2.records) {
            assert!((a.score - b.score).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_norms() {
        let p = protos(vec![vec![1.0, 0.0]]);
        let s = score_embeddings(&[vec![0.0, 0.0], vec![1.0, 1.0]], &p).unwrap();
        assert_eq!(s.records[0].score, -1.0);
        assert_eq!(s.zero_norm_embeddings, 1);
        let bad = protos(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(score_embeddings(&[vec![1.0, 0.0]], &bad), Err(Error::DegeneratePrototype(1))));
    }

    #[test]
    fn split_example() {
        let out = split_pool(&recs(&[0.2, 0.4, 0.6, 0.8]), 0.0).unwrap();
        assert!((out.stats.score_mean - 0.5).abs() < 1e-15);
        assert!((out.stats.score_std - 0.05f64.sqrt()).abs() < 1e-12);
        assert_eq!(out.split.positive, vec![2, 3]);
        assert_eq!(out.split.negative, vec![0, 1]);
        let s = out.stats;
        assert_eq!(AffinityStats::threshold_for(s.score_mean, s.score_std, s.beta), s.threshold);
        assert!(out.records.iter().all(|r| r.selected == (r.score >= s.threshold)));
    }

    #[test]
    fn split_limits_ties_and_errors() {
        let r = recs(&[0.1, 0.3, 0.3, 0.9]);
        assert!(split_pool(&r, 1e6).unwrap().split.positive.is_empty());
        assert_eq!(split_pool(&r, -1e6).unwrap().split.positive.len(), 4);
        let flat = split_pool(&recs(&[0.5, 0.5, 0.5]), 0.0).unwrap();
        assert_eq!(flat.split.positive.len(), 3);
        let flagged = split_pool(&recs(&[0.5, 0.5, 0.5]), 1.0).unwrap();
        assert!(flagged.degenerate);
        assert_eq!(flagged.split.positive.len(), 3);
        assert!(flagged.split.is_partition());
        assert!(matches!(split_pool(&recs(&[0.5]), 0.0), Err(Error::TooFewRecords { .. })));
    }

    #[test]
    fn auroc_cases() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2, 0.3]), Some(1.0));
        assert_eq!(auroc(&[0.1], &[0.9]), Some(0.0));
        assert_eq!(auroc(&[0.5], &[0.5]), Some(0.5));
        assert_eq!(auroc(&[], &[0.5]), None);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pos: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
        let neg: Vec<f64> = (0..500).map(|_| rng.gen()).collect();
        assert!((auroc(&pos, &neg).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn report_on_complete_overlap_has_unit_precision() {
        let r = split_pool(&recs(&[0.1, 0.5, 0.7, 0.9]), 0.0).unwrap().records;
        let rep = masking_report(&r, &[Origin::Shared; 4]).unwrap();
        assert_eq!(rep.precision, Some(1.0));
        assert_eq!(rep.auroc, None);
        assert_eq!(rep.recall, Some(0.5));
        let noise = masking_report(&r, &[Origin::Noise; 4]).unwrap();
        assert_eq!(noise.auroc, None);
        assert!(!noise.notes.is_empty());
        let total: usize = noise.histogram.counts.iter().flat_map(|(_, c)| c).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn scores_file_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let out = split_pool(&recs(&[0.12345678901234567, -0.3, 0.7, 0.1]), 0.5).unwrap();
        let meta = ScoreMeta {
            scenario_hash: "s".into(),
            checkpoint_hash: "c".into(),
            stats: out.stats,
            zero_norm_embeddings: 0,
            split_hash: out.split.hash(),
            pool_size: 4,
        };
        let origins = [Origin::Shared, Origin::Private, Origin::Noise, Origin::Shared];
        write_scores(&path, &out.records, Some(&origins), &meta).unwrap();
        let (records, split, back) = read_scores(&path).unwrap();
        assert_eq!(records, out.records);
        assert_eq!(split.positive, out.split.positive);
        assert_eq!(back, meta);
        let text = std::fs::read_to_string(&path).unwrap().replace("0.7,true", "0.7,false");
        std::fs::write(&path, text).unwrap();
        assert!(read_scores(&path).is_err());
    }
}
