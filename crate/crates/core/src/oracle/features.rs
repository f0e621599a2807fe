//! Feature schemes for assay oracles.
//!
//! A featurizer maps a chain pair to a fixed-width vector and is identified
//! by a scheme id; oracles record the scheme they were fit on and refuse
//! vectors from any other. The built-in scheme is a k-mer composition
//! profile computable from sequence alone; precomputed external tables are
//! supported for fitting and evaluation but cannot serve sequence queries,
//! which guided generation requires.

use super::OracleError;
use crate::artifact::sha256_hex;
use crate::seq::{vocab, SeqError, RESIDUES};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

/// A feature vector tagged with the scheme that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub scheme_id: String,
}

/// Maps chain pairs to feature vectors.
pub trait Featurizer: Send + Sync {
    /// Stable identifier for the scheme; oracles check it at predict time.
    fn scheme_id(&self) -> &str;

    /// Output dimensionality.
    fn dim(&self) -> usize;

    /// Whether arbitrary sequences can be featurized, as opposed to only
    /// ids present in a precomputed table.
    fn supports_sequence_queries(&self) -> bool;

    /// Featurize a sequence pair.
    fn features_for_sequence(&self, heavy: &str, light: &str) -> Result<FeatureVector, OracleError>;

    /// Featurize a corpus record. Sequence-capable schemes ignore the id.
    fn features_for_record(
        &self,
        id: &str,
        heavy: &str,
        light: &str,
    ) -> Result<FeatureVector, OracleError> {
        let _ = id;
        self.features_for_sequence(heavy, light)
    }
}

pub const KMER_SCHEME_ID: &str = "kmer-k1k2-v1";

const UNIGRAMS: usize = 20;
const BIGRAMS: usize = 400;
/// Per-chain block: unigram profile then bigram profile.
pub const KMER_CHAIN_DIM: usize = UNIGRAMS + BIGRAMS;
/// Heavy block then light block.
pub const KMER_DIM: usize = 2 * KMER_CHAIN_DIM;

/// Length-normalized k-mer composition over residues, k in {1, 2},
/// heavy chain block followed by light chain block.
#[derive(Debug, Clone, Copy, Default)]
pub struct KmerFeaturizer;

fn residue_index(ch: char, position: usize) -> Result<usize, OracleError> {
    match vocab().token(ch) {
        Some(t) if (t as usize) < UNIGRAMS => Ok(t as usize),
        _ => Err(OracleError::Seq(SeqError::InvalidResidue { position, ch })),
    }
}

/// One chain's profile: unigram fractions (sum 1) then bigram fractions
/// (sum 1, or all zero for a single-residue chain).
fn chain_profile(chain: &str, out: &mut [f64]) -> Result<(), OracleError> {
    debug_assert_eq!(out.len(), KMER_CHAIN_DIM);
    if chain.is_empty() {
        return Err(OracleError::Seq(SeqError::EmptyChain));
    }
    let mut indices = Vec::with_capacity(chain.len());
    for (pos, ch) in chain.chars().enumerate() {
        indices.push(residue_index(ch, pos)?);
    }
    let n = indices.len() as f64;
    for &i in &indices {
        out[i] += 1.0 / n;
    }
    if indices.len() >= 2 {
        let pairs = (indices.len() - 1) as f64;
        for w in indices.windows(2) {
            out[UNIGRAMS + w[0] * UNIGRAMS + w[1]] += 1.0 / pairs;
        }
    }
    Ok(())
}

impl Featurizer for KmerFeaturizer {
    fn scheme_id(&self) -> &str {
        KMER_SCHEME_ID
    }

    fn dim(&self) -> usize {
        KMER_DIM
    }

    fn supports_sequence_queries(&self) -> bool {
        true
    }

    fn features_for_sequence(&self, heavy: &str, light: &str) -> Result<FeatureVector, OracleError> {
        let mut values = vec![0.0; KMER_DIM];
        chain_profile(heavy, &mut values[..KMER_CHAIN_DIM])?;
        chain_profile(light, &mut values[KMER_CHAIN_DIM..])?;
        Ok(FeatureVector {
            values,
            scheme_id: KMER_SCHEME_ID.to_string(),
        })
    }
}

/// Index of a residue bigram within one chain block.
pub fn bigram_index(a: char, b: char) -> Option<usize> {
    let ia = RESIDUES.iter().position(|&r| r == a as u8)?;
    let ib = RESIDUES.iter().position(|&r| r == b as u8)?;
    Some(UNIGRAMS + ia * UNIGRAMS + ib)
}

/// Precomputed per-id feature table loaded from a delimited file.
///
/// The scheme id is derived from the table contents, so two oracles fit on
/// different tables can never be confused for one another.
#[derive(Debug, Clone)]
pub struct ExternalFeatures {
    scheme_id: String,
    dim: usize,
    by_id: BTreeMap<String, Vec<f64>>,
}

impl ExternalFeatures {
    pub fn from_rows(rows: BTreeMap<String, Vec<f64>>) -> Result<Self, OracleError> {
        let mut dim = None;
        for (id, values) in &rows {
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(OracleError::DimensionMismatch {
                        expected: d,
                        found: values.len(),
                    })
                }
                _ => {}
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(OracleError::NonFiniteFeature { id: id.clone() });
            }
        }
        let dim = dim.ok_or(OracleError::EmptyTable)?;
        if dim == 0 {
            return Err(OracleError::EmptyTable);
        }
        let mut canon = String::new();
        for (id, values) in &rows {
            canon.push_str(id);
            for v in values {
                canon.push('\t');
                canon.push_str(&format!("{:?}", v.to_bits()));
            }
            canon.push('\n');
        }
        let digest = sha256_hex(canon.as_bytes());
        Ok(ExternalFeatures {
            scheme_id: format!("external-d{dim}-{}", &digest[..12]),
            dim,
            by_id: rows,
        })
    }

    /// Parse `id<delim>f0<delim>f1...` rows; tab-delimited if the first
    /// line contains a tab, else comma. A first line whose second cell is
    /// not numeric is treated as a header and skipped.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, OracleError> {
        let mut rows: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut delim = None;
        for (line_idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let lineno = line_idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let d = *delim.get_or_insert(if line.contains('\t') { '\t' } else { ',' });
            let cells: Vec<&str> = line.split(d).map(str::trim).collect();
            if cells.len() < 2 {
                return Err(OracleError::Table {
                    line: lineno,
                    msg: "expected an id and at least one feature".into(),
                });
            }
            let values: Result<Vec<f64>, _> = cells[1..].iter().map(|c| c.parse::<f64>()).collect();
            let values = match values {
                Ok(v) => v,
                Err(_) if rows.is_empty() && line_idx == 0 => continue, // header row
                Err(_) => {
                    return Err(OracleError::Table {
                        line: lineno,
                        msg: "non-numeric feature cell".into(),
                    })
                }
            };
            if values.iter().any(|v| !v.is_finite()) {
                return Err(OracleError::Table {
                    line: lineno,
                    msg: "non-finite feature value".into(),
                });
            }
            if rows.insert(cells[0].to_string(), values).is_some() {
                return Err(OracleError::Table {
                    line: lineno,
                    msg: format!("duplicate id {}", cells[0]),
                });
            }
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.by_id.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

impl Featurizer for ExternalFeatures {
    fn scheme_id(&self) -> &str {
        &self.scheme_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn supports_sequence_queries(&self) -> bool {
        false
    }

    fn features_for_sequence(&self, _heavy: &str, _light: &str) -> Result<FeatureVector, OracleError> {
        Err(OracleError::SequenceQueryUnsupported {
            scheme: self.scheme_id.clone(),
        })
    }

    fn features_for_record(
        &self,
        id: &str,
        _heavy: &str,
        _light: &str,
    ) -> Result<FeatureVector, OracleError> {
        let values = self
            .by_id
            .get(id)
            .ok_or_else(|| OracleError::MissingFeatures { id: id.to_string() })?;
        Ok(FeatureVector {
            values: values.clone(),
            scheme_id: self.scheme_id.clone(),
        })
    }
}
