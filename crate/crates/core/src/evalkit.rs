//! Pairwise identity, similarity ECDFs, sequence-similarity networks, and
//! the percentile-threshold enrichment statistic.
//!
//! Identity is exact normalized Levenshtein over the pipe-concatenated
//! `heavy|light` strings; no alignment heuristics. Everything here is
//! deterministic, including the seeded pair subsampling used for very large
//! sets.

use crate::corpus::PairedCorpus;
use crate::seq::{encode_pair, SeqError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("input must be nonempty")]
    EmptyInput,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("percentile {0} outside [0, 100]")]
    InvalidPercentile(f64),
    #[error("id {id} has no prediction for assay {assay}")]
    MissingPrediction { id: String, assay: String },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::EmptyInput => "empty-input",
            EvalError::InvalidThreshold(_) => "invalid-threshold",
            EvalError::InvalidPercentile(_) => "invalid-percentile",
            EvalError::MissingPrediction { .. } => "missing-prediction",
            EvalError::DuplicateId(_) => "duplicate-id",
            EvalError::Seq(e) => e.code(),
        }
    }
}

/// Exact Levenshtein distance, two-row dynamic program.
pub fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Identity between two already-validated concatenated strings.
fn identity_of_concats(a: &str, b: &str) -> f64 {
    let d = levenshtein(a.as_bytes(), b.as_bytes());
    let max_len = a.len().max(b.len());
    1.0 - d as f64 / max_len as f64
}

/// Pairwise identity of two chain pairs:
/// `1 − Levenshtein(a, b) / max(|a|, |b|)` over `heavy|light` concatenations.
/// Symmetric, in [0, 1], exactly 1 on identical pairs.
pub fn pairwise_identity(a: (&str, &str), b: (&str, &str)) -> Result<f64, EvalError> {
    encode_pair(a.0, a.1)?;
    encode_pair(b.0, b.1)?;
    Ok(identity_of_concats(
        &format!("{}|{}", a.0, a.1),
        &format!("{}|{}", b.0, b.1),
    ))
}

/// Threshold query with the cheap length bound applied first: when the
/// length difference alone caps identity below `threshold`, the DP is
/// skipped. Exact: agrees with computing the identity in full.
pub fn identity_at_least(a: &str, b: &str, threshold: f64) -> bool {
    let max_len = a.len().max(b.len()) as f64;
    if max_len == 0.0 {
        return true;
    }
    let diff = a.len().abs_diff(b.len()) as f64;
    // d >= |len(a) - len(b)|, so identity <= 1 - diff/max_len.
    if 1.0 - diff / max_len < threshold {
        return false;
    }
    identity_of_concats(a, b) >= threshold
}

/// Symmetric identity matrix over a set of ids.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityMatrix {
    ids: Vec<String>,
    values: Vec<f64>, // row-major n*n
}

impl IdentityMatrix {
    /// Compute from parallel id/concatenated-sequence lists. Pairs are
    /// evaluated in parallel; the result is schedule-independent.
    pub fn from_concats(ids: Vec<String>, concats: Vec<String>) -> Result<Self, EvalError> {
        if ids.is_empty() || ids.len() != concats.len() {
            return Err(EvalError::EmptyInput);
        }
        {
            let mut seen = BTreeSet::new();
            for id in &ids {
                if !seen.insert(id) {
                    return Err(EvalError::DuplicateId(id.clone()));
                }
            }
        }
        let n = ids.len();
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| identity_of_concats(&concats[i], &concats[j]))
                    .collect()
            })
            .collect();
        let mut values = vec![1.0; n * n];
        for (i, row) in upper.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + 1 + off;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(IdentityMatrix { ids, values })
    }

    pub fn from_corpus(corpus: &PairedCorpus) -> Result<Self, EvalError> {
        let ids = corpus.records().iter().map(|r| r.id.clone()).collect();
        let concats = corpus.records().iter().map(|r| r.concat()).collect();
        Self::from_concats(ids, concats)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Row-major upper-triangle distances (1 − identity), the layout
    /// agglomerative-clustering routines consume.
    pub fn condensed_distances(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(1.0 - self.get(i, j));
            }
        }
        out
    }

    /// Identities of all unordered pairs, row-major order.
    pub fn pair_identities(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.get(i, j));
            }
        }
        out
    }
}

/// Empirical CDF: (distinct sorted value, fraction of inputs <= value).
/// The final fraction is exactly 1.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in ecdf input"));
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut seen = 0usize;
    let mut i = 0usize;
    while i < sorted.len() {
        let v = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == v {
            j += 1;
        }
        seen += j - i;
        out.push((v, seen as f64 / n));
        i = j;
    }
    if let Some(last) = out.last_mut() {
        last.1 = 1.0;
    }
    Ok(out)
}

/// Percentile with linear interpolation between order statistics:
/// rank = p/100 * (n-1), value interpolated between the surrounding points.
pub fn percentile_linear(values: &[f64], p: f64) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(EvalError::InvalidPercentile(p));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile input"));
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    let frac = rank - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// One undirected similarity edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SsnEdge {
    pub a: String,
    pub b: String,
    pub identity: f64,
}

/// Edges of the sequence-similarity network at the given threshold: every
/// unordered pair with identity >= threshold, no self edges, sorted by the
/// id pair.
pub fn ssn_edges(matrix: &IdentityMatrix, threshold: f64) -> Result<Vec<SsnEdge>, EvalError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(EvalError::InvalidThreshold(threshold));
    }
    let n = matrix.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = matrix.get(i, j);
            if v >= threshold {
                let (a, b) = if matrix.ids()[i] <= matrix.ids()[j] {
                    (matrix.ids()[i].clone(), matrix.ids()[j].clone())
                } else {
                    (matrix.ids()[j].clone(), matrix.ids()[i].clone())
                };
                edges.push(SsnEdge { a, b, identity: v });
            }
        }
    }
    edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    Ok(edges)
}

/// Enrichment against percentile thresholds taken from a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentReport {
    pub percentile: f64,
    /// Per assay: the percentile-th percentile of reference predictions.
    pub thresholds: BTreeMap<String, f64>,
    /// Fraction of candidates strictly below the threshold, per assay.
    pub per_assay_fractions: BTreeMap<String, f64>,
    /// Candidates strictly below every threshold jointly.
    pub pass: usize,
    pub total: usize,
    pub fraction_pass: f64,
}

/// Compute the enrichment report.
///
/// Thresholds come from the reference ids only; a candidate passes iff its
/// prediction is strictly below the threshold for every assay. The assay set
/// is the union over all referenced ids, and every id must cover it.
pub fn enrichment_report(
    predictions: &BTreeMap<String, BTreeMap<String, f64>>,
    reference_ids: &[String],
    candidate_ids: &[String],
    percentile: f64,
) -> Result<EnrichmentReport, EvalError> {
    if reference_ids.is_empty() || candidate_ids.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(EvalError::InvalidPercentile(percentile));
    }
    let mut assays: BTreeSet<String> = BTreeSet::new();
    for id in reference_ids.iter().chain(candidate_ids) {
        if let Some(m) = predictions.get(id) {
            assays.extend(m.keys().cloned());
        }
    }
    if assays.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let lookup = |id: &String, assay: &String| -> Result<f64, EvalError> {
        predictions
            .get(id)
            .and_then(|m| m.get(assay))
            .copied()
            .ok_or_else(|| EvalError::MissingPrediction {
                id: id.clone(),
                assay: assay.clone(),
            })
    };
    let mut thresholds = BTreeMap::new();
    for assay in &assays {
        let refs: Vec<f64> = reference_ids
            .iter()
            .map(|id| lookup(id, assay))
            .collect::<Result<_, _>>()?;
        thresholds.insert(assay.clone(), percentile_linear(&refs, percentile)?);
    }
    let mut per_assay_pass: BTreeMap<String, usize> = assays.iter().map(|a| (a.clone(), 0)).collect();
    let mut pass = 0usize;
    for id in candidate_ids {
        let mut all = true;
        for assay in &assays {
            let v = lookup(id, assay)?;
            if v < thresholds[assay] {
                *per_assay_pass.get_mut(assay).unwrap() += 1;
            } else {
                all = false;
            }
        }
        if all {
            pass += 1;
        }
    }
    let total = candidate_ids.len();
    let per_assay_fractions = per_assay_pass
        .into_iter()
        .map(|(a, c)| (a, c as f64 / total as f64))
        .collect();
    Ok(EnrichmentReport {
        percentile,
        thresholds,
        per_assay_fractions,
        pass,
        total,
        fraction_pass: pass as f64 / total as f64,
    })
}

/// Identities over all (or a seeded subsample of) unordered pairs within one
/// set of concatenated sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseStats {
    pub identities: Vec<f64>,
    pub pairs_used: usize,
    pub total_pairs: usize,
    pub subsampled: bool,
}

/// All pairs when the set has at most `cap` members; otherwise a seeded
/// uniform subsample of `cap*(cap-1)/2` distinct pairs. Deterministic in
/// (input order, cap, seed).
pub fn pairwise_stats(concats: &[String], cap: usize, seed: u64) -> Result<PairwiseStats, EvalError> {
    if concats.len() < 2 {
        return Err(EvalError::EmptyInput);
    }
    let n = concats.len();
    let total_pairs = n * (n - 1) / 2;
    let (pairs, subsampled): (Vec<(usize, usize)>, bool) = if cap < 2 || n <= cap {
        let mut all = Vec::with_capacity(total_pairs);
        for i in 0..n {
            for j in i + 1..n {
                all.push((i, j));
            }
        }
        (all, false)
    } else {
        let budget = cap * (cap - 1) / 2;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
        while chosen.len() < budget {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            chosen.insert((i.min(j), i.max(j)));
        }
        (chosen.into_iter().collect(), true)
    };
    let identities: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| identity_of_concats(&concats[i], &concats[j]))
        .collect();
    Ok(PairwiseStats {
        pairs_used: identities.len(),
        identities,
        total_pairs,
        subsampled,
    })
}
