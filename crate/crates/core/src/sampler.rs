//! Temperature softmax, decoding-order policies, length sampling, and the
//! positionwise decoding loop.
//!
//! Determinism contract: one seeded ChaCha20 stream drives a generation, and
//! draws are consumed in a fixed order: length draws (when sampling lengths),
//! then per decoding step a position draw (random order policy only) followed
//! by token draws. Greedy commitment and min-entropy ordering consume
//! nothing, so switching those options never perturbs unrelated draws.

use crate::corpus::PairedCorpus;
use crate::denoiser::{Denoiser, DenoiserError, Logits};
use crate::seq::{vocab, SequenceState, EMIT_TOKENS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),
    #[error("logit vector contains a non-finite value")]
    NonFiniteLogit,
    #[error("no positions to select from")]
    EmptyMap,
    #[error("corpus has no records")]
    EmptyCorpus,
    #[error("initial state has no masked positions")]
    NothingToDecode,
    #[error("no valid pair after {0} attempts")]
    RetriesExhausted(u32),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
}

impl SamplerError {
    pub fn code(&self) -> &'static str {
        match self {
            SamplerError::NonPositiveTemperature(_) => "non-positive-temperature",
            SamplerError::NonFiniteLogit => "non-finite-logit",
            SamplerError::EmptyMap => "empty-map",
            SamplerError::EmptyCorpus => "empty-corpus",
            SamplerError::NothingToDecode => "nothing-to-decode",
            SamplerError::RetriesExhausted(_) => "retries-exhausted",
            SamplerError::Denoiser(e) => e.code(),
        }
    }
}

/// Which masked position to reveal next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderPolicy {
    /// Uniformly random among the remaining masked positions.
    Random,
    /// The position whose tempered distribution has minimum entropy;
    /// ties break toward the lowest index. Consumes no randomness.
    MinEntropy,
}

/// Decoding configuration. `greedy` is the zero-temperature limit: token
/// choice becomes argmax and `temperature` is ignored (entropies are then
/// reported for the untempered distribution).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub order: OrderPolicy,
    pub seed: u64,
    pub greedy: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 1.0,
            order: OrderPolicy::MinEntropy,
            seed: 0,
            greedy: false,
        }
    }
}

/// Temperature softmax with max subtraction: p_i ∝ exp(x_i / t).
/// The result sums to 1 within 1e-12.
pub fn softmax_with_temperature(
    logits: &Logits,
    temperature: f64,
) -> Result<[f64; EMIT_TOKENS], SamplerError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(SamplerError::NonPositiveTemperature(temperature));
    }
    if logits.0.iter().any(|x| !x.is_finite()) {
        return Err(SamplerError::NonFiniteLogit);
    }
    let max = logits.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; EMIT_TOKENS];
    let mut sum = 0.0;
    for (i, &x) in logits.0.iter().enumerate() {
        let e = ((x - max) / temperature).exp();
        out[i] = e;
        sum += e;
    }
    for p in &mut out {
        *p /= sum;
    }
    debug_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    Ok(out)
}

/// Shannon entropy in nats; zero-probability terms contribute zero.
pub fn entropy(probs: &[f64; EMIT_TOKENS]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Argmax token with ties broken toward the lowest index.
pub fn argmax_token(probs: &[f64; EMIT_TOKENS]) -> u8 {
    let mut best = 0usize;
    for i in 1..EMIT_TOKENS {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best as u8
}

/// Inverse-CDF draw from a normalized distribution; consumes exactly one
/// uniform variate.
pub fn draw_token(probs: &[f64; EMIT_TOKENS], rng: &mut ChaCha20Rng) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0u8;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i as u8;
        }
        acc += p;
        if u < acc {
            return i as u8;
        }
    }
    // Rounding left acc slightly below 1; fall back to the last support point.
    last_positive
}

/// Pick the next position to reveal. The random policy consumes exactly one
/// draw; min-entropy consumes none.
pub fn select_next_position(
    logit_map: &BTreeMap<usize, Logits>,
    policy: OrderPolicy,
    temperature: f64,
    rng: &mut ChaCha20Rng,
) -> Result<usize, SamplerError> {
    if logit_map.is_empty() {
        return Err(SamplerError::EmptyMap);
    }
    match policy {
        OrderPolicy::Random => {
            let keys: Vec<usize> = logit_map.keys().copied().collect();
            Ok(keys[rng.random_range(0..keys.len())])
        }
        OrderPolicy::MinEntropy => {
            let mut best: Option<(usize, f64)> = None;
            for (&pos, logits) in logit_map {
                let h = entropy(&softmax_with_temperature(logits, temperature)?);
                match best {
                    Some((_, bh)) if h >= bh => {}
                    _ => best = Some((pos, h)),
                }
            }
            Ok(best.unwrap().0)
        }
    }
}

/// Empirical joint distribution of (concatenated length, heavy length),
/// the only length information generation needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthModel {
    entries: Vec<LengthCount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthCount {
    pub total: u32,
    pub heavy: u32,
    pub count: u64,
}

/// A sampled pair layout: `total` positions with the separator at `heavy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledLength {
    pub total: usize,
    pub heavy: usize,
}

impl LengthModel {
    /// Number of distinct (total, heavy) layouts in the support.
    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn from_corpus(corpus: &PairedCorpus) -> Result<Self, SamplerError> {
        if corpus.is_empty() {
            return Err(SamplerError::EmptyCorpus);
        }
        let mut entries = Vec::new();
        for &total in corpus.length_histogram().keys() {
            for (&heavy, &count) in corpus.heavy_lengths_for(total).unwrap() {
                entries.push(LengthCount {
                    total: total as u32,
                    heavy: heavy as u32,
                    count,
                });
            }
        }
        Ok(LengthModel { entries })
    }

    pub fn entries(&self) -> &[LengthCount] {
        &self.entries
    }

    /// Draw a (total, heavy) pair from the empirical joint distribution.
    /// Consumes exactly two draws: one over totals, one over heavy lengths
    /// conditional on the total. The support is exactly the set of observed
    /// pairs.
    pub fn sample(&self, rng: &mut ChaCha20Rng) -> Result<SampledLength, SamplerError> {
        if self.entries.is_empty() {
            return Err(SamplerError::EmptyCorpus);
        }
        let grand: u64 = self.entries.iter().map(|e| e.count).sum();
        let mut pick = rng.random_range(0..grand);
        let mut total = self.entries[0].total;
        // Totals are grouped because entries are sorted by (total, heavy).
        let mut i = 0;
        'outer: while i < self.entries.len() {
            let t = self.entries[i].total;
            let mut group = 0u64;
            while i < self.entries.len() && self.entries[i].total == t {
                group += self.entries[i].count;
                i += 1;
            }
            if pick < group {
                total = t;
                break 'outer;
            }
            pick -= group;
        }
        let group: Vec<&LengthCount> = self
            .entries
            .iter()
            .filter(|e| e.total == total)
            .collect();
        let group_sum: u64 = group.iter().map(|e| e.count).sum();
        let mut pick = rng.random_range(0..group_sum);
        for e in &group {
            if pick < e.count {
                return Ok(SampledLength {
                    total: e.total as usize,
                    heavy: e.heavy as usize,
                });
            }
            pick -= e.count;
        }
        unreachable!("cumulative walk covers the whole mass");
    }
}

/// Draw a (total, heavy) length pair directly from a corpus.
pub fn sample_length(
    corpus: &PairedCorpus,
    rng: &mut ChaCha20Rng,
) -> Result<SampledLength, SamplerError> {
    LengthModel::from_corpus(corpus)?.sample(rng)
}

/// One guided branch summary kept in the trace: the candidate token and its
/// composite value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchValue {
    pub token: u8,
    pub value: f64,
}

/// One decoding step: where, what, how certain, and (when guided) the
/// branch values that were compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeStep {
    pub position: usize,
    pub token: u8,
    pub entropy: f64,
    pub branches: Vec<BranchValue>,
}

/// Full record of a decoding run.
///
/// Invariant: one step per initially masked position, all positions
/// distinct, and `final_state` is complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<DecodeStep>,
    pub final_state: SequenceState,
}

impl DecodeTrace {
    /// Line-delimited export for debugging: step, position, token symbol,
    /// entropy, and the guided branch values (`token:value` joined by `;`).
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step\tposition\ttoken\tentropy\tbranches")?;
        let v = vocab();
        for (i, s) in self.steps.iter().enumerate() {
            let branches = s
                .branches
                .iter()
                .map(|b| format!("{}:{:.6}", v.symbol(b.token).unwrap_or('?'), b.value))
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                w,
                "{}\t{}\t{}\t{:.6}\t{}",
                i,
                s.position,
                v.symbol(s.token).unwrap_or('?'),
                s.entropy,
                branches
            )?;
        }
        Ok(())
    }
}

fn validate_config(cfg: &SamplerConfig) -> Result<(), SamplerError> {
    if !cfg.greedy && !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        return Err(SamplerError::NonPositiveTemperature(cfg.temperature));
    }
    Ok(())
}

/// Effective temperature used for entropies and token distributions.
pub(crate) fn effective_temperature(cfg: &SamplerConfig) -> f64 {
    if cfg.greedy {
        1.0
    } else {
        cfg.temperature
    }
}

/// Decode every masked position of `init`, consuming draws from `rng` in the
/// documented order. `cfg.seed` is ignored here; it only seeds [`generate`].
pub fn generate_with_rng(
    model: &dyn Denoiser,
    cfg: &SamplerConfig,
    init: &SequenceState,
    rng: &mut ChaCha20Rng,
) -> Result<DecodeTrace, SamplerError> {
    validate_config(cfg)?;
    if init.is_complete() {
        return Err(SamplerError::NothingToDecode);
    }
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(state.masked_count());
    let t_eff = effective_temperature(cfg);
    while !state.is_complete() {
        let map = model.predict_logits(&state)?;
        let position = select_next_position(&map, cfg.order, t_eff, rng)?;
        let probs = softmax_with_temperature(&map[&position], t_eff)?;
        let h = entropy(&probs);
        let token = if cfg.greedy {
            argmax_token(&probs)
        } else {
            draw_token(&probs, rng)
        };
        state.commit(position, token);
        steps.push(DecodeStep {
            position,
            token,
            entropy: h,
            branches: Vec::new(),
        });
    }
    debug_assert_eq!(steps.len(), init.masked_count());
    Ok(DecodeTrace {
        steps,
        final_state: state,
    })
}

/// Decode with a fresh stream seeded from `cfg.seed`.
pub fn generate(
    model: &dyn Denoiser,
    cfg: &SamplerConfig,
    init: &SequenceState,
) -> Result<DecodeTrace, SamplerError> {
    let mut rng = rng_from_seed(cfg.seed);
    generate_with_rng(model, cfg, init, &mut rng)
}

/// Default cap for pair-validity rejection sampling.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 100;

/// A generated, decodable pair and the bookkeeping behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub trace: DecodeTrace,
    pub heavy: String,
    pub light: String,
    /// 1-based count of decoding attempts (1 = accepted immediately).
    pub attempts: u32,
}

/// Generate one decodable pair from scratch.
///
/// The model emits over residues *and* the separator, so a finished state can
/// occasionally break the pair structure; such states are rejected and the
/// attempt repeats on a fresh stream. Attempt `a` uses the stream seeded by
/// `derive_seed(seq_seed, a)` and consumes, in order: the two length draws,
/// then the per-step draws of [`generate_with_rng`]. The result is therefore
/// the generation distribution conditioned on pair validity, and a pure
/// function of `seq_seed`.
pub fn generate_pair(
    model: &dyn Denoiser,
    lengths: &LengthModel,
    cfg: &SamplerConfig,
    seq_seed: u64,
    max_attempts: u32,
) -> Result<PairSample, SamplerError> {
    validate_config(cfg)?;
    for attempt in 0..max_attempts {
        let mut rng = rng_from_seed(derive_seed(seq_seed, attempt as u64));
        let len = lengths.sample(&mut rng)?;
        let init = SequenceState::pair_scaffold(len.total, len.heavy)
            .expect("length model output always admits a scaffold");
        let trace = generate_with_rng(model, cfg, &init, &mut rng)?;
        match crate::seq::decode_state(&trace.final_state) {
            Ok((heavy, light)) => {
                return Ok(PairSample {
                    trace,
                    heavy,
                    light,
                    attempts: attempt + 1,
                })
            }
            Err(_) => continue,
        }
    }
    Err(SamplerError::RetriesExhausted(max_attempts))
}

/// Infill a template state (already containing its separator) until the
/// result decodes, with the same attempt-stream discipline as
/// [`generate_pair`] minus the length draws.
pub fn infill_pair(
    model: &dyn Denoiser,
    cfg: &SamplerConfig,
    init: &SequenceState,
    seq_seed: u64,
    max_attempts: u32,
) -> Result<PairSample, SamplerError> {
    validate_config(cfg)?;
    for attempt in 0..max_attempts {
        let mut rng = rng_from_seed(derive_seed(seq_seed, attempt as u64));
        let trace = generate_with_rng(model, cfg, init, &mut rng)?;
        match crate::seq::decode_state(&trace.final_state) {
            Ok((heavy, light)) => {
                return Ok(PairSample {
                    trace,
                    heavy,
                    light,
                    attempts: attempt + 1,
                })
            }
            Err(_) => continue,
        }
    }
    Err(SamplerError::RetriesExhausted(max_attempts))
}

/// The splitmix64 output function; a cheap, well-dispersed u64 permutation.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a tag (sequence
/// index, branch token, ...). Documented so external tooling can reproduce
/// any sub-stream.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ splitmix64(tag))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
