//! Value-guided decoding: at each step, candidate tokens are drawn from the
//! sampler's tempered distribution, every distinct candidate is rolled out
//! to a full pair, scored by a weighted composite of oracle predictions,
//! and the best-scoring candidate is committed.
//!
//! With one branch the procedure consumes exactly the sampler's random
//! stream and commits exactly its choices, so guidance strictly generalizes
//! unguided decoding. Rollouts run on derived streams keyed by (step,
//! candidate token), which keeps the main stream independent of the branch
//! count and makes branch evaluation order-free and parallelizable.

use crate::denoiser::{Denoiser, DenoiserError};
use crate::oracle::{Featurizer, OracleError, RidgeOracle};
use crate::corpus::PairedCorpus;
use crate::sampler::{
    argmax_token, derive_seed, draw_token, effective_temperature, entropy, generate_with_rng,
    rng_from_seed, select_next_position, softmax_with_temperature, BranchValue, DecodeStep,
    DecodeTrace, LengthModel, PairSample, SamplerConfig, SamplerError,
};
use crate::seq::{decode_state, SeqError, SequenceState};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Stream tag separating rollout randomness from the main decode stream.
pub const ROLLOUT_STREAM_TAG: u64 = 0x524F_4C4C; // "ROLL"

pub const DEFAULT_BRANCHES: usize = 8;

/// Stds below this are floored to 1.0 when freezing normalization terms.
const NORM_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("guidance needs at least one assay term")]
    EmptyTerms,
    #[error("branch count must be at least 1")]
    ZeroBranches,
    #[error("term {index} has a non-finite weight, mean, or std")]
    NonFiniteTerm { index: usize },
    #[error("term {index} has non-positive std {std}")]
    NonPositiveStd { index: usize, std: f64 },
    #[error("scheme {scheme} cannot featurize rollouts; guidance needs sequence queries")]
    SequenceQueryUnsupported { scheme: String },
    #[error("reference corpus is empty")]
    EmptyReference,
    #[error("no decodable pair within {0} attempts")]
    RetriesExhausted(u32),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

impl GuidanceError {
    pub fn code(&self) -> &'static str {
        match self {
            GuidanceError::EmptyTerms => "empty-terms",
            GuidanceError::ZeroBranches => "zero-branches",
            GuidanceError::NonFiniteTerm { .. } => "non-finite-term",
            GuidanceError::NonPositiveStd { .. } => "non-positive-std",
            GuidanceError::SequenceQueryUnsupported { .. } => "sequence-query-unsupported",
            GuidanceError::EmptyReference => "empty-reference",
            GuidanceError::RetriesExhausted(_) => "retries-exhausted",
            GuidanceError::Oracle(e) => e.code(),
            GuidanceError::Sampler(e) => e.code(),
            GuidanceError::Denoiser(e) => e.code(),
            GuidanceError::Seq(e) => e.code(),
        }
    }
}

/// How hypothetical rollouts finish a branch before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RolloutPolicy {
    /// Argmax completion; deterministic given the branch state.
    Greedy,
    /// Tempered sampling on the branch's derived stream.
    Sampled,
}

/// One assay's contribution to the composite value. Lower raw predictions
/// are better for every supported assay, hence the negation in the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssayTerm {
    pub oracle: RidgeOracle,
    pub weight: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
}

impl AssayTerm {
    /// Freeze normalization statistics from reference-set predictions:
    /// mean and population std (floored for near-constant predictions).
    pub fn from_reference(
        oracle: RidgeOracle,
        weight: f64,
        featurizer: &dyn Featurizer,
        reference: &PairedCorpus,
    ) -> Result<Self, GuidanceError> {
        if reference.is_empty() {
            return Err(GuidanceError::EmptyReference);
        }
        let preds = oracle.predict_corpus(featurizer, reference)?;
        let n = preds.len() as f64;
        let mean = preds.values().sum::<f64>() / n;
        let var = preds.values().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Ok(AssayTerm {
            oracle,
            weight,
            norm_mean: mean,
            norm_std: if std < NORM_STD_FLOOR { 1.0 } else { std },
        })
    }
}

/// Complete guidance configuration. Normalization statistics are part of
/// the config, so a run's selection behavior is fully pinned once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub terms: Vec<AssayTerm>,
    pub branches: usize,
    pub rollout: RolloutPolicy,
    pub sampler: SamplerConfig,
}

impl GuidanceConfig {
    pub fn validate(&self, featurizer: &dyn Featurizer) -> Result<(), GuidanceError> {
        if self.terms.is_empty() {
            return Err(GuidanceError::EmptyTerms);
        }
        if self.branches == 0 {
            return Err(GuidanceError::ZeroBranches);
        }
        for (index, term) in self.terms.iter().enumerate() {
            if !(term.weight.is_finite() && term.norm_mean.is_finite() && term.norm_std.is_finite())
            {
                return Err(GuidanceError::NonFiniteTerm { index });
            }
            if term.norm_std <= 0.0 {
                return Err(GuidanceError::NonPositiveStd {
                    index,
                    std: term.norm_std,
                });
            }
            if term.oracle.scheme_id != featurizer.scheme_id() {
                return Err(GuidanceError::Oracle(OracleError::SchemeMismatch {
                    expected: term.oracle.scheme_id.clone(),
                    found: featurizer.scheme_id().to_string(),
                }));
            }
        }
        if !featurizer.supports_sequence_queries() {
            return Err(GuidanceError::SequenceQueryUnsupported {
                scheme: featurizer.scheme_id().to_string(),
            });
        }
        Ok(())
    }
}

/// Weighted sum of negated z-scores: higher is better, and a prediction at
/// the reference mean contributes zero.
pub fn composite_value(predictions: &[f64], terms: &[AssayTerm]) -> f64 {
    debug_assert_eq!(predictions.len(), terms.len());
    terms
        .iter()
        .zip(predictions)
        .map(|(t, p)| t.weight * (-(p - t.norm_mean) / t.norm_std))
        .sum()
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub token: u8,
    /// Composite value of the rolled-out pair; -inf when the rollout did
    /// not decode to a valid pair.
    pub value: f64,
    pub decoded: bool,
    /// Raw per-term predictions, aligned with the config's terms; empty
    /// when the rollout did not decode.
    pub predictions: Vec<f64>,
}

/// One committed guided step.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedStep {
    pub position: usize,
    pub token: u8,
    pub entropy: f64,
    /// All evaluated candidates, ascending by token.
    pub branches: Vec<BranchRecord>,
}

/// Roll a branch state out to completion and score it.
fn score_branch(
    model: &dyn Denoiser,
    cfg: &GuidanceConfig,
    featurizer: &dyn Featurizer,
    branch_state: SequenceState,
    rollout_seed: u64,
    token: u8,
) -> Result<BranchRecord, GuidanceError> {
    let final_state = if branch_state.is_complete() {
        branch_state
    } else {
        let rollout_cfg = SamplerConfig {
            temperature: cfg.sampler.temperature,
            order: cfg.sampler.order,
            seed: 0,
            greedy: matches!(cfg.rollout, RolloutPolicy::Greedy),
        };
        let mut rng = rng_from_seed(rollout_seed);
        generate_with_rng(model, &rollout_cfg, &branch_state, &mut rng)?.final_state
    };
    match decode_state(&final_state) {
        Ok((heavy, light)) => {
            let mut predictions = Vec::with_capacity(cfg.terms.len());
            for term in &cfg.terms {
                predictions.push(term.oracle.predict_sequence(featurizer, &heavy, &light)?);
            }
            let value = composite_value(&predictions, &cfg.terms);
            Ok(BranchRecord {
                token,
                value,
                decoded: true,
                predictions,
            })
        }
        Err(_) => Ok(BranchRecord {
            token,
            value: f64::NEG_INFINITY,
            decoded: false,
            predictions: Vec::new(),
        }),
    }
}

/// One guided decode step.
///
/// Draws `cfg.branches` candidate tokens i.i.d. from the tempered
/// distribution at the selected position (a greedy sampler collapses this
/// to the single argmax without consuming randomness), evaluates each
/// distinct candidate once, and commits the candidate with the highest
/// composite value; exact ties go to the lowest token index. The rollout
/// stream for a candidate is derived from `(rollout_base, step, token)`, so
/// evaluation is parallel and independent of branch count or order.
pub fn svdd_step(
    model: &dyn Denoiser,
    state: &SequenceState,
    cfg: &GuidanceConfig,
    featurizer: &dyn Featurizer,
    rng: &mut ChaCha20Rng,
    rollout_base: u64,
    step_index: usize,
) -> Result<(GuidedStep, SequenceState), GuidanceError> {
    let map = model.predict_logits(state)?;
    let t_eff = effective_temperature(&cfg.sampler);
    let position = select_next_position(&map, cfg.sampler.order, t_eff, rng)?;
    let probs = softmax_with_temperature(&map[&position], t_eff)?;
    let step_entropy = entropy(&probs);
    let mut candidates = BTreeSet::new();
    if cfg.sampler.greedy {
        candidates.insert(argmax_token(&probs));
    } else {
        for _ in 0..cfg.branches {
            candidates.insert(draw_token(&probs, rng));
        }
    }
    let branches: Vec<BranchRecord> = candidates
        .into_iter()
        .collect::<Vec<u8>>()
        .into_par_iter()
        .map(|token| {
            let mut branch_state = state.clone();
            branch_state.commit(position, token);
            let rollout_seed = derive_seed(rollout_base, ((step_index as u64) << 8) | token as u64);
            score_branch(model, cfg, featurizer, branch_state, rollout_seed, token)
        })
        .collect::<Result<_, _>>()?;
    // Ascending token order plus strict improvement = lowest token on ties.
    let mut best = &branches[0];
    for b in &branches[1..] {
        if b.value > best.value {
            best = b;
        }
    }
    let mut next = state.clone();
    next.commit(position, best.token);
    Ok((
        GuidedStep {
            position,
            token: best.token,
            entropy: step_entropy,
            branches,
        },
        next,
    ))
}

/// Guided analogue of the sampler's decode loop; consumes `rng` in exactly
/// the sampler's order (position draw, then candidate token draws).
pub fn guided_generate_with_rng(
    model: &dyn Denoiser,
    cfg: &GuidanceConfig,
    featurizer: &dyn Featurizer,
    init: &SequenceState,
    rng: &mut ChaCha20Rng,
    rollout_base: u64,
) -> Result<DecodeTrace, GuidanceError> {
    cfg.validate(featurizer)?;
    if init.is_complete() {
        return Err(GuidanceError::Sampler(SamplerError::NothingToDecode));
    }
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(state.masked_count());
    let mut step_index = 0usize;
    while !state.is_complete() {
        let (step, next) = svdd_step(model, &state, cfg, featurizer, rng, rollout_base, step_index)?;
        steps.push(DecodeStep {
            position: step.position,
            token: step.token,
            entropy: step.entropy,
            branches: step
                .branches
                .iter()
                .map(|b| BranchValue {
                    token: b.token,
                    value: b.value,
                })
                .collect(),
        });
        state = next;
        step_index += 1;
    }
    debug_assert_eq!(steps.len(), init.masked_count());
    Ok(DecodeTrace {
        steps,
        final_state: state,
    })
}

/// Guided decode on fresh streams seeded from the sampler config.
pub fn guided_generate(
    model: &dyn Denoiser,
    cfg: &GuidanceConfig,
    featurizer: &dyn Featurizer,
    init: &SequenceState,
) -> Result<DecodeTrace, GuidanceError> {
    let mut rng = rng_from_seed(cfg.sampler.seed);
    let rollout_base = derive_seed(cfg.sampler.seed, ROLLOUT_STREAM_TAG);
    guided_generate_with_rng(model, cfg, featurizer, init, &mut rng, rollout_base)
}

/// Guided analogue of the sampler's pair generator. Attempt `a` replays the
/// sampler's exact attempt stream (lengths, then steps), with rollout
/// randomness on a separate stream keyed by the same attempt, so a
/// one-branch guided run accepts and rejects in lockstep with the sampler.
pub fn guided_generate_pair(
    model: &dyn Denoiser,
    lengths: &LengthModel,
    cfg: &GuidanceConfig,
    featurizer: &dyn Featurizer,
    seq_seed: u64,
    max_attempts: u32,
) -> Result<PairSample, GuidanceError> {
    cfg.validate(featurizer)?;
    let rollout_root = derive_seed(seq_seed, ROLLOUT_STREAM_TAG);
    for attempt in 0..max_attempts {
        let mut rng = rng_from_seed(derive_seed(seq_seed, attempt as u64));
        let len = lengths.sample(&mut rng)?;
        let init = SequenceState::pair_scaffold(len.total, len.heavy)
            .expect("length model output always admits a scaffold");
        let rollout_base = derive_seed(rollout_root, attempt as u64);
        let trace = guided_generate_with_rng(model, cfg, featurizer, &init, &mut rng, rollout_base)?;
        match decode_state(&trace.final_state) {
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
    Err(GuidanceError::RetriesExhausted(max_attempts))
}

/// Guided template infilling with the same attempt discipline minus the
/// length draws.
pub fn guided_infill_pair(
    model: &dyn Denoiser,
    cfg: &GuidanceConfig,
    featurizer: &dyn Featurizer,
    init: &SequenceState,
    seq_seed: u64,
    max_attempts: u32,
) -> Result<PairSample, GuidanceError> {
    cfg.validate(featurizer)?;
    let rollout_root = derive_seed(seq_seed, ROLLOUT_STREAM_TAG);
    for attempt in 0..max_attempts {
        let mut rng = rng_from_seed(derive_seed(seq_seed, attempt as u64));
        let rollout_base = derive_seed(rollout_root, attempt as u64);
        let trace = guided_generate_with_rng(model, cfg, featurizer, init, &mut rng, rollout_base)?;
        match decode_state(&trace.final_state) {
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
    Err(GuidanceError::RetriesExhausted(max_attempts))
}
