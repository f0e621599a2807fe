//! Conditional masked-token models and pseudo-log-likelihood scoring.
//!
//! The reference model is a smoothed count table over local contexts: each
//! masked position is keyed by its relative-position bucket and its nearest
//! visible neighbor token on each side (within a fixed window). The model is
//! deliberately small; the decoding and guidance machinery only sees the
//! [`Denoiser`] trait, so a heavier predictor can drop in without touching
//! anything downstream.

use crate::corpus::PairedCorpus;
use crate::sampler::LengthModel;
use crate::seq::{encode_pair, SequenceState, EMIT_TOKENS, MASK};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("corpus has no records")]
    EmptyCorpus,
    #[error("masking draw count must be positive")]
    ZeroDraws,
    #[error("state has no masked positions")]
    NoMaskedPositions,
    #[error("state has masked positions; scoring requires a complete state")]
    IncompleteState,
    #[error(transparent)]
    Seq(#[from] crate::seq::SeqError),
}

impl DenoiserError {
    pub fn code(&self) -> &'static str {
        match self {
            DenoiserError::EmptyCorpus => "empty-corpus",
            DenoiserError::ZeroDraws => "zero-draws",
            DenoiserError::NoMaskedPositions => "no-masked-positions",
            DenoiserError::IncompleteState => "incomplete-state",
            DenoiserError::Seq(e) => e.code(),
        }
    }
}

/// Unnormalized log-scores over the 21 emit-able tokens at one position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logits(pub [f64; EMIT_TOKENS]);

impl Logits {
    pub fn uniform() -> Self {
        Logits([(1.0 / EMIT_TOKENS as f64).ln(); EMIT_TOKENS])
    }
}

/// A conditional model of masked tokens given the visible remainder.
///
/// Implementations must be pure: the same state yields the same logits, and
/// logits for a position depend only on visible content, never on how the
/// state was reached. All returned values must be finite.
pub trait Denoiser: Send + Sync {
    /// Logits for every currently masked position.
    fn predict_logits(
        &self,
        state: &SequenceState,
    ) -> Result<BTreeMap<usize, Logits>, DenoiserError>;
}

/// Neighbor slot value meaning "no visible token within the window".
/// Context tokens are always emit-able (0..=20), so 21 is unambiguous.
const CTX_NONE: u8 = 21;
/// How far to scan for a visible neighbor on each side.
const CONTEXT_WINDOW: usize = 3;

/// Relative-position bucket: position i of a length-len state maps to
/// floor(i * buckets / len), always in 0..buckets.
fn bucket_of(i: usize, len: usize, buckets: u32) -> u8 {
    debug_assert!(i < len);
    ((i * buckets as usize) / len) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CountRow {
    bucket: u8,
    left: u8,
    right: u8,
    counts: [u64; EMIT_TOKENS],
}

/// Options for [`ContextualDenoiser::train_with`].
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub buckets: u32,
    pub smoothing: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            buckets: 16,
            smoothing: 0.5,
        }
    }
}

/// Smoothed count table over (position bucket, left neighbor, right neighbor)
/// contexts. Rows are kept sorted by key, so serialization and lookup are
/// deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualDenoiser {
    buckets: u32,
    smoothing: f64,
    rows: Vec<CountRow>,
}

impl ContextualDenoiser {
    /// Train with explicit options. Masking corruption per record and draw:
    ///
    /// 1. `u = rng.random::<f64>()`, one draw per (record, draw) pair;
    /// 2. `k = round(u * len)`, the number of positions to mask;
    /// 3. a partial Fisher-Yates pass picks the masked set: for `t` in
    ///    `0..k`, `j = rng.random_range(t..len)`, swap positions `t` and `j`;
    ///    the first `k` slots are masked.
    ///
    /// Records are visited in corpus (id-sorted) order, draws in order, so
    /// the whole procedure is a pure function of (corpus, draws, seed).
    /// Contexts are read from the corrupted state; targets are the original
    /// tokens, separator included.
    pub fn train_with(
        corpus: &PairedCorpus,
        masking_draws: u32,
        seed: u64,
        opts: TrainOptions,
    ) -> Result<Self, DenoiserError> {
        if corpus.is_empty() {
            return Err(DenoiserError::EmptyCorpus);
        }
        if masking_draws == 0 {
            return Err(DenoiserError::ZeroDraws);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut counts: BTreeMap<(u8, u8, u8), [u64; EMIT_TOKENS]> = BTreeMap::new();
        for record in corpus.records() {
            let base = encode_pair(&record.heavy, &record.light)?;
            let len = base.len();
            let mut idx: Vec<usize> = Vec::with_capacity(len);
            for _ in 0..masking_draws {
                let u: f64 = rng.random();
                let k = (u * len as f64).round() as usize;
                idx.clear();
                idx.extend(0..len);
                for t in 0..k {
                    let j = rng.random_range(t..len);
                    idx.swap(t, j);
                }
                if k == 0 {
                    continue;
                }
                let mut masked_tokens = base.tokens().to_vec();
                for &p in &idx[..k] {
                    masked_tokens[p] = MASK;
                }
                let mut masked_positions: Vec<usize> = idx[..k].to_vec();
                masked_positions.sort_unstable();
                for &p in &masked_positions {
                    let key = (
                        bucket_of(p, len, opts.buckets),
                        neighbor_left(&masked_tokens, p),
                        neighbor_right(&masked_tokens, p),
                    );
                    let target = base.tokens()[p] as usize;
                    counts.entry(key).or_insert([0; EMIT_TOKENS])[target] += 1;
                }
            }
        }
        let rows = counts
            .into_iter()
            .map(|((bucket, left, right), counts)| CountRow {
                bucket,
                left,
                right,
                counts,
            })
            .collect();
        Ok(ContextualDenoiser {
            buckets: opts.buckets,
            smoothing: opts.smoothing,
            rows,
        })
    }

    pub fn buckets(&self) -> u32 {
        self.buckets
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Number of distinct contexts observed during training.
    pub fn context_count(&self) -> usize {
        self.rows.len()
    }

    fn counts_for(&self, key: (u8, u8, u8)) -> [u64; EMIT_TOKENS] {
        match self
            .rows
            .binary_search_by_key(&key, |r| (r.bucket, r.left, r.right))
        {
            Ok(i) => self.rows[i].counts,
            Err(_) => [0; EMIT_TOKENS],
        }
    }
}

fn neighbor_left(tokens: &[u8], i: usize) -> u8 {
    let lo = i.saturating_sub(CONTEXT_WINDOW);
    for j in (lo..i).rev() {
        if tokens[j] < EMIT_TOKENS as u8 {
            return tokens[j];
        }
    }
    CTX_NONE
}

fn neighbor_right(tokens: &[u8], i: usize) -> u8 {
    let hi = (i + 1 + CONTEXT_WINDOW).min(tokens.len());
    for &t in &tokens[i + 1..hi] {
        if t < EMIT_TOKENS as u8 {
            return t;
        }
    }
    CTX_NONE
}

/// Additive-smoothed log-probabilities from a count vector:
/// `ln((c_t + s) / (total + |V| * s))`. Finite for every context, including
/// never-observed ones (all counts zero yields the uniform distribution).
fn logits_from_counts(counts: &[u64; EMIT_TOKENS], smoothing: f64) -> Logits {
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + EMIT_TOKENS as f64 * smoothing;
    let mut out = [0.0; EMIT_TOKENS];
    for (t, &c) in counts.iter().enumerate() {
        out[t] = ((c as f64 + smoothing) / denom).ln();
    }
    Logits(out)
}

impl Denoiser for ContextualDenoiser {
    fn predict_logits(
        &self,
        state: &SequenceState,
    ) -> Result<BTreeMap<usize, Logits>, DenoiserError> {
        let positions = state.masked_positions();
        if positions.is_empty() {
            return Err(DenoiserError::NoMaskedPositions);
        }
        let len = state.len();
        let mut out = BTreeMap::new();
        for p in positions {
            let key = (
                bucket_of(p, len, self.buckets),
                neighbor_left(state.tokens(), p),
                neighbor_right(state.tokens(), p),
            );
            out.insert(p, logits_from_counts(&self.counts_for(key), self.smoothing));
        }
        Ok(out)
    }
}

/// Train a contextual denoiser with default options (16 buckets, 0.5
/// smoothing).
pub fn train_contextual_denoiser(
    corpus: &PairedCorpus,
    masking_draws: u32,
    seed: u64,
) -> Result<ContextualDenoiser, DenoiserError> {
    ContextualDenoiser::train_with(corpus, masking_draws, seed, TrainOptions::default())
}

/// Mean leave-one-out log-probability of a complete state, in nats per
/// position. Each position is masked alone, scored under the model's
/// normalized distribution, and the log-probabilities are averaged over the
/// whole state, separator included. Always <= 0.
pub fn pseudo_log_likelihood(
    model: &dyn Denoiser,
    state: &SequenceState,
) -> Result<f64, DenoiserError> {
    if !state.is_complete() {
        return Err(DenoiserError::IncompleteState);
    }
    let len = state.len();
    let mut sum = 0.0;
    for i in 0..len {
        let holdout = state.mask_position(i)?;
        let logits = model.predict_logits(&holdout)?;
        let l = logits[&i];
        let target = state.token(i) as usize;
        debug_assert!(target < EMIT_TOKENS);
        sum += log_softmax_at(&l, target);
    }
    Ok(sum / len as f64)
}

/// log softmax(logits)[target], computed with the max-subtraction trick.
fn log_softmax_at(logits: &Logits, target: usize) -> f64 {
    let max = logits.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = logits.0.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    logits.0[target] - lse
}

/// Everything needed to generate without the training corpus: the denoiser
/// plus the empirical length model. This is the payload of a
/// [`crate::artifact::ArtifactKind::Denoiser`] artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserBundle {
    pub model: ContextualDenoiser,
    pub lengths: LengthModel,
}

impl DenoiserBundle {
    pub fn from_corpus(
        corpus: &PairedCorpus,
        masking_draws: u32,
        seed: u64,
    ) -> Result<Self, DenoiserError> {
        Ok(DenoiserBundle {
            model: train_contextual_denoiser(corpus, masking_draws, seed)?,
            lengths: LengthModel::from_corpus(corpus).map_err(|_| DenoiserError::EmptyCorpus)?,
        })
    }
}
