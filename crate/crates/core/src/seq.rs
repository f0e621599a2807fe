//! Token alphabet, paired-sequence diffusion state, and region masks.
//!
//! The vocabulary is closed: 20 amino acids in alphabetical order, the
//! heavy/light separator `|`, the mask symbol `#`, and the pad symbol `.`.
//! Token indices are stable across the whole crate and across serialized
//! artifacts; nothing may renumber them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 20 canonical residues, alphabetical, occupying token indices 0..20.
pub const RESIDUES: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";
/// Token index of the chain separator `|`.
pub const SEP: u8 = 20;
/// Token index of the mask symbol `#`.
pub const MASK: u8 = 21;
/// Token index of the pad symbol `.`.
pub const PAD: u8 = 22;
/// Total vocabulary size.
pub const VOCAB_SIZE: usize = 23;
/// Number of tokens a denoiser may emit: residues plus the separator.
/// Mask and pad are never predicted.
pub const EMIT_TOKENS: usize = 21;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeqError {
    #[error("invalid residue {ch:?} at position {position}")]
    InvalidResidue { position: usize, ch: char },
    #[error("chain must not be empty")]
    EmptyChain,
    #[error("state still has masked positions")]
    IncompleteState,
    #[error("state must contain exactly one separator, found {0}")]
    MalformedPair(usize),
    #[error("span ({0}, {1}) out of bounds for state length {2}")]
    SpanOutOfBounds(usize, usize, usize),
    #[error("span ({0}, {1}) covers the separator at position {2}")]
    SpanCoversSeparator(usize, usize, usize),
    #[error("spans must be non-empty, sorted, and non-overlapping")]
    InvalidSpans,
    #[error("token and mask vectors must have equal nonzero length")]
    LengthMismatch,
    #[error("masked position {0} must hold the mask token")]
    MaskTokenMismatch(usize),
    #[error("token value {0} outside the vocabulary")]
    UnknownToken(u8),
}

impl SeqError {
    /// Stable machine-readable code, used verbatim by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            SeqError::InvalidResidue { .. } => "invalid-residue",
            SeqError::EmptyChain => "empty-chain",
            SeqError::IncompleteState => "incomplete-state",
            SeqError::MalformedPair(_) => "malformed-pair",
            SeqError::SpanOutOfBounds(..) => "span-out-of-bounds",
            SeqError::SpanCoversSeparator(..) => "span-covers-separator",
            SeqError::InvalidSpans => "invalid-spans",
            SeqError::LengthMismatch => "length-mismatch",
            SeqError::MaskTokenMismatch(_) => "mask-token-mismatch",
            SeqError::UnknownToken(_) => "unknown-token",
        }
    }
}

/// Bijection between the 23 symbols and token indices.
#[derive(Debug, Clone)]
pub struct TokenVocabulary {
    symbols: [char; VOCAB_SIZE],
}

impl Default for TokenVocabulary {
    fn default() -> Self {
        let mut symbols = ['\0'; VOCAB_SIZE];
        for (i, &b) in RESIDUES.iter().enumerate() {
            symbols[i] = b as char;
        }
        symbols[SEP as usize] = '|';
        symbols[MASK as usize] = '#';
        symbols[PAD as usize] = '.';
        TokenVocabulary { symbols }
    }
}

impl TokenVocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Token index for a symbol. Residues are accepted case-insensitively.
    pub fn token(&self, ch: char) -> Option<u8> {
        let up = ch.to_ascii_uppercase();
        self.symbols.iter().position(|&s| s == up).map(|i| i as u8)
    }

    /// Display symbol for a token index.
    pub fn symbol(&self, token: u8) -> Result<char, SeqError> {
        self.symbols
            .get(token as usize)
            .copied()
            .ok_or(SeqError::UnknownToken(token))
    }

    pub fn is_residue(&self, token: u8) -> bool {
        (token as usize) < RESIDUES.len()
    }
}

/// Shared vocabulary instance; the mapping is fixed, so one suffices.
pub fn vocab() -> &'static TokenVocabulary {
    static VOCAB: std::sync::OnceLock<TokenVocabulary> = std::sync::OnceLock::new();
    VOCAB.get_or_init(TokenVocabulary::new)
}

/// Diffusion state over a fixed-length token vector.
///
/// Invariant: `tokens.len() == masked.len() >= 1`, and every masked position
/// holds [`MASK`]. States are value types; decoding operates on clones and
/// never mutates shared data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceState {
    tokens: Vec<u8>,
    masked: Vec<bool>,
}

impl SequenceState {
    /// Build a state from raw parts, enforcing the mask/token invariant.
    pub fn from_parts(tokens: Vec<u8>, masked: Vec<bool>) -> Result<Self, SeqError> {
        if tokens.is_empty() || tokens.len() != masked.len() {
            return Err(SeqError::LengthMismatch);
        }
        for (i, &t) in tokens.iter().enumerate() {
            if t as usize >= VOCAB_SIZE {
                return Err(SeqError::UnknownToken(t));
            }
            if masked[i] && t != MASK {
                return Err(SeqError::MaskTokenMismatch(i));
            }
        }
        Ok(SequenceState { tokens, masked })
    }

    /// Fully masked state of the given length, no separator scaffold.
    pub fn fully_masked(len: usize) -> Result<Self, SeqError> {
        if len == 0 {
            return Err(SeqError::LengthMismatch);
        }
        Ok(SequenceState {
            tokens: vec![MASK; len],
            masked: vec![true; len],
        })
    }

    /// Masked pair scaffold: `total` positions with the separator fixed at
    /// index `heavy_len` and everything else masked. Requires at least one
    /// position on each side of the separator.
    pub fn pair_scaffold(total: usize, heavy_len: usize) -> Result<Self, SeqError> {
        if total < 3 || heavy_len == 0 || heavy_len + 2 > total {
            return Err(SeqError::LengthMismatch);
        }
        let mut tokens = vec![MASK; total];
        let mut masked = vec![true; total];
        tokens[heavy_len] = SEP;
        masked[heavy_len] = false;
        Ok(SequenceState { tokens, masked })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: length >= 1
    }

    pub fn tokens(&self) -> &[u8] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> u8 {
        self.tokens[i]
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.masked[i]
    }

    /// Masked positions in ascending order.
    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.masked[i]).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.masked.iter().all(|&m| !m)
    }

    /// Positions holding an unmasked separator.
    pub fn separator_positions(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.masked[i] && self.tokens[i] == SEP)
            .collect()
    }

    /// Commit an emitted token at a masked position. Decoding-internal.
    pub(crate) fn commit(&mut self, position: usize, token: u8) {
        debug_assert!(self.masked[position], "commit to unmasked position");
        debug_assert!((token as usize) < EMIT_TOKENS, "commit of non-emit token");
        self.tokens[position] = token;
        self.masked[position] = false;
    }

    /// Clone with position `i` re-masked. Used for leave-one-out scoring.
    pub fn mask_position(&self, i: usize) -> Result<Self, SeqError> {
        if i >= self.len() {
            return Err(SeqError::SpanOutOfBounds(i, i + 1, self.len()));
        }
        let mut out = self.clone();
        out.tokens[i] = MASK;
        out.masked[i] = true;
        Ok(out)
    }

    /// Human-readable rendering; masked positions show as `#`.
    pub fn display(&self) -> String {
        let v = vocab();
        self.tokens
            .iter()
            .map(|&t| v.symbol(t).unwrap_or('?'))
            .collect()
    }
}

/// Encode a heavy/light chain pair as a complete state
/// `heavy | light` with no masked positions.
pub fn encode_pair(heavy: &str, light: &str) -> Result<SequenceState, SeqError> {
    let v = vocab();
    if heavy.is_empty() || light.is_empty() {
        return Err(SeqError::EmptyChain);
    }
    let mut tokens = Vec::with_capacity(heavy.len() + light.len() + 1);
    for (position, ch) in heavy.chars().enumerate() {
        match v.token(ch) {
            Some(t) if v.is_residue(t) => tokens.push(t),
            _ => return Err(SeqError::InvalidResidue { position, ch }),
        }
    }
    tokens.push(SEP);
    let offset = heavy.chars().count() + 1;
    for (k, ch) in light.chars().enumerate() {
        match v.token(ch) {
            Some(t) if v.is_residue(t) => tokens.push(t),
            _ => {
                return Err(SeqError::InvalidResidue {
                    position: offset + k,
                    ch,
                })
            }
        }
    }
    let masked = vec![false; tokens.len()];
    Ok(SequenceState { tokens, masked })
}

/// Decode a complete state back into `(heavy, light)` strings.
pub fn decode_state(state: &SequenceState) -> Result<(String, String), SeqError> {
    if !state.is_complete() {
        return Err(SeqError::IncompleteState);
    }
    let seps = state.separator_positions();
    if seps.len() != 1 {
        return Err(SeqError::MalformedPair(seps.len()));
    }
    let sep = seps[0];
    if sep == 0 || sep + 1 == state.len() {
        return Err(SeqError::EmptyChain);
    }
    let v = vocab();
    let chain = |range: std::ops::Range<usize>| -> Result<String, SeqError> {
        let mut s = String::with_capacity(range.len());
        for i in range {
            let t = state.tokens[i];
            if !v.is_residue(t) {
                return Err(SeqError::InvalidResidue {
                    position: i,
                    ch: v.symbol(t)?,
                });
            }
            s.push(v.symbol(t)?);
        }
        Ok(s)
    };
    let heavy = chain(0..sep)?;
    let light = chain(sep + 1..state.len())?;
    Ok((heavy, light))
}

/// A labeled set of half-open spans to re-mask, e.g. a CDR annotation.
///
/// Invariant: spans are non-empty, sorted by start, and non-overlapping.
/// Bounds and separator collisions are checked against a concrete state at
/// application time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    spans: Vec<(usize, usize)>,
    label: String,
}

impl RegionMask {
    pub fn new(spans: Vec<(usize, usize)>, label: impl Into<String>) -> Result<Self, SeqError> {
        if spans.is_empty() {
            return Err(SeqError::InvalidSpans);
        }
        for w in spans.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(SeqError::InvalidSpans);
            }
        }
        if spans.iter().any(|&(s, e)| s >= e) {
            return Err(SeqError::InvalidSpans);
        }
        Ok(RegionMask {
            spans,
            label: label.into(),
        })
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Total number of positions covered.
    pub fn width(&self) -> usize {
        self.spans.iter().map(|&(s, e)| e - s).sum()
    }
}

/// Re-mask every position covered by `region`, returning a new state.
///
/// Masking is idempotent: re-masking an already-masked position is a no-op.
/// A span covering the separator of a pair state is rejected, so infilling
/// can never destroy the pairing.
pub fn apply_region_mask(
    state: &SequenceState,
    region: &RegionMask,
) -> Result<SequenceState, SeqError> {
    let len = state.len();
    for &(start, end) in region.spans() {
        if end > len {
            return Err(SeqError::SpanOutOfBounds(start, end, len));
        }
        for p in start..end {
            if !state.masked[p] && state.tokens[p] == SEP {
                return Err(SeqError::SpanCoversSeparator(start, end, p));
            }
        }
    }
    let mut out = state.clone();
    for &(start, end) in region.spans() {
        for p in start..end {
            out.tokens[p] = MASK;
            out.masked[p] = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vocabulary_is_a_23_token_bijection() {
        let v = vocab();
        let mut seen = std::collections::BTreeSet::new();
        for t in 0..VOCAB_SIZE as u8 {
            let ch = v.symbol(t).unwrap();
            assert!(seen.insert(ch), "duplicate symbol {ch}");
            assert_eq!(v.token(ch), Some(t));
        }
        assert_eq!(seen.len(), VOCAB_SIZE);
        assert_eq!(v.symbol(SEP).unwrap(), '|');
        assert_eq!(v.symbol(MASK).unwrap(), '#');
        assert_eq!(v.symbol(PAD).unwrap(), '.');
        assert!(v.symbol(23).is_err());
    }

    #[test]
    fn residues_are_alphabetical_and_first() {
        let v = vocab();
        for (i, &b) in RESIDUES.iter().enumerate() {
            assert_eq!(v.token(b as char), Some(i as u8));
            assert!(v.is_residue(i as u8));
        }
        assert!(!v.is_residue(SEP));
        let mut sorted = RESIDUES.to_vec();
        sorted.sort_unstable();
        assert_eq!(&sorted, RESIDUES);
    }

    #[test]
    fn lowercase_input_is_accepted() {
        let v = vocab();
        assert_eq!(v.token('a'), Some(0));
        assert_eq!(v.token('y'), Some(19));
        let st = encode_pair("acd", "wy").unwrap();
        assert_eq!(st.tokens(), &[0, 1, 2, SEP, 18, 19]);
    }

    #[test]
    fn encode_pair_layout() {
        let st = encode_pair("AC", "DE").unwrap();
        assert_eq!(st.len(), 5);
        assert_eq!(st.tokens(), &[0, 1, SEP, 2, 3]);
        assert!(st.is_complete());
        assert_eq!(st.separator_positions(), vec![2]);
    }

    #[test]
    fn encode_pair_rejects_bad_input() {
        assert_eq!(encode_pair("", "AC"), Err(SeqError::EmptyChain));
        assert_eq!(encode_pair("AC", ""), Err(SeqError::EmptyChain));
        assert_eq!(
            encode_pair("AXC", "DE"),
            Err(SeqError::InvalidResidue {
                position: 1,
                ch: 'X'
            })
        );
        // Position indices for the light chain count from the start of the
        // concatenated state.
        assert_eq!(
            encode_pair("AC", "DBE"),
            Err(SeqError::InvalidResidue {
                position: 4,
                ch: 'B'
            })
        );
        // Separator and mask symbols are not residues.
        assert!(encode_pair("A|C", "DE").is_err());
        assert!(encode_pair("A#C", "DE").is_err());
    }

    #[test]
    fn decode_requires_completeness_and_one_separator() {
        let st = encode_pair("ACD", "EF").unwrap();
        assert_eq!(decode_state(&st).unwrap(), ("ACD".into(), "EF".into()));

        let masked = SequenceState::from_parts(vec![MASK, SEP, 0], vec![true, false, false]).unwrap();
        assert_eq!(decode_state(&masked), Err(SeqError::IncompleteState));

        let no_sep = SequenceState::from_parts(vec![0, 1, 2], vec![false; 3]).unwrap();
        assert_eq!(decode_state(&no_sep), Err(SeqError::MalformedPair(0)));

        let two_sep =
            SequenceState::from_parts(vec![0, SEP, 1, SEP, 2], vec![false; 5]).unwrap();
        assert_eq!(decode_state(&two_sep), Err(SeqError::MalformedPair(2)));
    }

    #[test]
    fn from_parts_enforces_mask_invariant() {
        assert_eq!(
            SequenceState::from_parts(vec![], vec![]),
            Err(SeqError::LengthMismatch)
        );
        assert_eq!(
            SequenceState::from_parts(vec![0, 1], vec![true]),
            Err(SeqError::LengthMismatch)
        );
        assert_eq!(
            SequenceState::from_parts(vec![0, 1], vec![true, false]),
            Err(SeqError::MaskTokenMismatch(0))
        );
        assert_eq!(
            SequenceState::from_parts(vec![0, 99], vec![false, false]),
            Err(SeqError::UnknownToken(99))
        );
    }

    #[test]
    fn pair_scaffold_places_separator() {
        let st = SequenceState::pair_scaffold(6, 3).unwrap();
        assert_eq!(st.len(), 6);
        assert_eq!(st.masked_count(), 5);
        assert_eq!(st.token(3), SEP);
        assert!(!st.is_masked(3));
        // Separator at either end would leave an empty chain.
        assert!(SequenceState::pair_scaffold(6, 0).is_err());
        assert!(SequenceState::pair_scaffold(6, 5).is_err());
        assert!(SequenceState::pair_scaffold(2, 1).is_err());
    }

    #[test]
    fn region_mask_validation() {
        assert!(RegionMask::new(vec![], "x").is_err());
        assert!(RegionMask::new(vec![(2, 2)], "x").is_err());
        assert!(RegionMask::new(vec![(3, 2)], "x").is_err());
        assert!(RegionMask::new(vec![(0, 3), (2, 5)], "x").is_err());
        assert!(RegionMask::new(vec![(4, 6), (0, 2)], "x").is_err());
        // Adjacent spans are allowed.
        let r = RegionMask::new(vec![(0, 2), (2, 4)], "cdr").unwrap();
        assert_eq!(r.width(), 4);
        assert_eq!(r.label(), "cdr");
    }

    #[test]
    fn region_mask_spec_cases() {
        // Masking positions 2..4 of a length-6 complete state leaves exactly
        // those positions masked.
        let st = encode_pair("ACD", "EF").unwrap();
        let region = RegionMask::new(vec![(4, 6)], "l-cdr").unwrap();
        let masked = apply_region_mask(&st, &region).unwrap();
        assert_eq!(masked.masked_positions(), vec![4, 5]);
        assert_eq!(masked.token(4), MASK);
        assert_eq!(masked.masked_count(), region.width());

        // Out of bounds.
        let far = RegionMask::new(vec![(5, 9)], "x").unwrap();
        assert_eq!(
            apply_region_mask(&st, &far),
            Err(SeqError::SpanOutOfBounds(5, 9, 6))
        );

        // Covering the separator (position 3) is rejected.
        let over = RegionMask::new(vec![(2, 5)], "x").unwrap();
        assert_eq!(
            apply_region_mask(&st, &over),
            Err(SeqError::SpanCoversSeparator(2, 5, 3))
        );
    }

    #[test]
    fn region_mask_is_idempotent() {
        let st = encode_pair("ACDE", "FG").unwrap();
        let region = RegionMask::new(vec![(0, 2), (5, 7)], "x").unwrap();
        let once = apply_region_mask(&st, &region).unwrap();
        let twice = apply_region_mask(&once, &region).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn display_shows_masks() {
        let st = SequenceState::pair_scaffold(5, 2).unwrap();
        assert_eq!(st.display(), "##|##");
    }

    fn chain_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec(0..20u8, 1..40).prop_map(|ts| {
            ts.into_iter()
                .map(|t| RESIDUES[t as usize] as char)
                .collect()
        })
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(h in chain_strategy(), l in chain_strategy()) {
            let st = encode_pair(&h, &l).unwrap();
            prop_assert_eq!(st.len(), h.len() + l.len() + 1);
            let (h2, l2) = decode_state(&st).unwrap();
            prop_assert_eq!(h, h2);
            prop_assert_eq!(l, l2);
        }

        #[test]
        fn masked_count_equals_region_width(
            h in chain_strategy(),
            l in chain_strategy(),
            a in 0usize..10,
            w in 1usize..5,
        ) {
            let st = encode_pair(&h, &l).unwrap();
            let start = a % h.len();
            let end = (start + w).min(h.len());
            prop_assume!(start < end);
            let region = RegionMask::new(vec![(start, end)], "h").unwrap();
            let masked = apply_region_mask(&st, &region).unwrap();
            prop_assert_eq!(masked.masked_count(), end - start);
            let again = apply_region_mask(&masked, &region).unwrap();
            prop_assert_eq!(masked, again);
        }
    }
}
