//! Synthetic paired corpora with planted family structure and two noisy
//! lower-is-better assay readouts. Everything here is a pure function of
//! the config, so tests and demos can regenerate identical data anywhere.
//!
//! Draw order per dataset: one founder pair per family (lengths, then
//! residues), then per record in id order its heavy and light mutation
//! draws, then its two assay noise draws.

use crate::corpus::{assay_table_from_rows, AssayTable, CorpusError, CorpusRecord, PairedCorpus};
use crate::sampler::rng_from_seed;
use crate::seq::RESIDUES;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Assay columns emitted by [`toy_dataset`], in table order. Both are risk
/// scores: lower raw values are better.
pub const TOY_ASSAYS: [&str; 2] = ["hydrophobicity", "self_association"];

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl ToyError {
    pub fn code(&self) -> &'static str {
        match self {
            ToyError::InvalidConfig(_) => "invalid-toy-config",
            ToyError::Corpus(e) => e.code(),
        }
    }
}

/// Generation parameters. The default is the corpus the acceptance suite
/// runs on: 246 records in 16 families, tight enough within families and
/// distant enough between them that average linkage at the default cut
/// recovers the families exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub records: usize,
    pub families: usize,
    /// Inclusive heavy-chain length range for family founders.
    pub heavy_len: (usize, usize),
    /// Inclusive light-chain length range for family founders.
    pub light_len: (usize, usize),
    /// Per-position substitution probability applied to every member.
    pub mutation_rate: f64,
    /// Assay noise scale around the sequence-determined signal.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            records: 246,
            families: 16,
            heavy_len: (10, 14),
            light_len: (8, 12),
            mutation_rate: 0.06,
            noise_sd: 0.02,
            seed: 17,
        }
    }
}

impl ToyConfig {
    fn validate(&self) -> Result<(), ToyError> {
        if self.families == 0 {
            return Err(ToyError::InvalidConfig("families must be at least 1"));
        }
        if self.records < self.families {
            return Err(ToyError::InvalidConfig("need at least one record per family"));
        }
        for (lo, hi) in [self.heavy_len, self.light_len] {
            if lo == 0 || lo > hi {
                return Err(ToyError::InvalidConfig("length range must satisfy 1 <= lo <= hi"));
            }
        }
        if !(self.mutation_rate >= 0.0 && self.mutation_rate < 1.0) {
            return Err(ToyError::InvalidConfig("mutation rate must lie in [0, 1)"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(ToyError::InvalidConfig("noise sd must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Fraction of strongly hydrophobic residues (F I L V W Y M) across both
/// chains; the noiseless signal behind the `hydrophobicity` assay.
pub fn hydrophobic_fraction(heavy: &str, light: &str) -> f64 {
    residue_fraction(heavy, light, b"FILVWYM")
}

/// Fraction of charged or amide residues (K R H Q N) across both chains;
/// the noiseless signal behind the `self_association` assay.
pub fn charged_polar_fraction(heavy: &str, light: &str) -> f64 {
    residue_fraction(heavy, light, b"KRHQN")
}

fn residue_fraction(heavy: &str, light: &str, set: &[u8]) -> f64 {
    let total = heavy.len() + light.len();
    let hits = heavy
        .bytes()
        .chain(light.bytes())
        .filter(|b| set.contains(b))
        .count();
    hits as f64 / total as f64
}

fn random_chain(rng: &mut ChaCha20Rng, range: (usize, usize)) -> String {
    let len = rng.random_range(range.0..=range.1);
    (0..len)
        .map(|_| RESIDUES[rng.random_range(0..RESIDUES.len())] as char)
        .collect()
}

/// Substitute each position with probability `rate`, uniformly over the
/// other nineteen residues.
fn mutate_chain(rng: &mut ChaCha20Rng, founder: &str, rate: f64) -> String {
    founder
        .bytes()
        .map(|b| {
            if rng.random::<f64>() < rate {
                let cur = RESIDUES.iter().position(|&r| r == b).unwrap();
                let offset = rng.random_range(1..RESIDUES.len());
                RESIDUES[(cur + offset) % RESIDUES.len()] as char
            } else {
                b as char
            }
        })
        .collect()
}

/// Generate the corpus and its assay table in one pass.
pub fn toy_dataset(cfg: &ToyConfig) -> Result<(PairedCorpus, AssayTable), ToyError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let founders: Vec<(String, String)> = (0..cfg.families)
        .map(|_| {
            let heavy = random_chain(&mut rng, cfg.heavy_len);
            let light = random_chain(&mut rng, cfg.light_len);
            (heavy, light)
        })
        .collect();
    // Records per family: as even as possible, earlier families take the
    // remainder.
    let base = cfg.records / cfg.families;
    let extra = cfg.records % cfg.families;
    let mut records = Vec::with_capacity(cfg.records);
    let mut rows = Vec::with_capacity(cfg.records);
    for (f, (founder_h, founder_l)) in founders.iter().enumerate() {
        let members = base + usize::from(f < extra);
        for m in 0..members {
            let heavy = mutate_chain(&mut rng, founder_h, cfg.mutation_rate);
            let light = mutate_chain(&mut rng, founder_l, cfg.mutation_rate);
            let id = format!("toy{f:02}m{m:03}");
            let hydro = hydrophobic_fraction(&heavy, &light)
                + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
            let selfa = charged_polar_fraction(&heavy, &light)
                + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
            records.push(CorpusRecord { id: id.clone(), heavy, light });
            rows.push((id, vec![Some(hydro), Some(selfa)]));
        }
    }
    let corpus = PairedCorpus::from_records(records)?;
    let table = assay_table_from_rows(
        TOY_ASSAYS.iter().map(|s| s.to_string()).collect(),
        rows,
    )?;
    Ok((corpus, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::IdentityMatrix;
    use crate::oracle::{make_identity_folds, spearman, DEFAULT_FOLDS, DEFAULT_LINKAGE_CUT};

    #[test]
    fn default_dataset_has_the_advertised_shape() {
        let cfg = ToyConfig::default();
        let (corpus, table) = toy_dataset(&cfg).unwrap();
        assert_eq!(corpus.len(), 246);
        assert_eq!(table.len(), 246);
        assert_eq!(table.assay_names(), &["hydrophobicity", "self_association"]);
        for r in corpus.records() {
            assert!((10..=14).contains(&r.heavy.len()), "{}", r.id);
            assert!((8..=12).contains(&r.light.len()), "{}", r.id);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ToyConfig::default();
        let (c1, t1) = toy_dataset(&cfg).unwrap();
        let (c2, t2) = toy_dataset(&cfg).unwrap();
        assert_eq!(c1.records(), c2.records());
        for ((id1, v1), (id2, v2)) in t1.rows().zip(t2.rows()) {
            assert_eq!(id1, id2);
            for (a, b) in v1.iter().zip(v2) {
                assert_eq!(a.unwrap().to_bits(), b.unwrap().to_bits());
            }
        }
        let other = ToyConfig { seed: 18, ..cfg };
        let (c3, _) = toy_dataset(&other).unwrap();
        assert_ne!(c1.records(), c3.records());
    }

    #[test]
    fn planted_families_survive_clustering_and_balance_folds() {
        let cfg = ToyConfig::default();
        let (corpus, _) = toy_dataset(&cfg).unwrap();
        let assignment =
            make_identity_folds(&corpus, DEFAULT_FOLDS, DEFAULT_LINKAGE_CUT).unwrap();
        assert_eq!(assignment.cluster_count(), cfg.families);
        // Families never straddle folds: a family's records share a prefix.
        for f in 0..cfg.families {
            let prefix = format!("toy{f:02}m");
            let folds: std::collections::BTreeSet<usize> = assignment
                .assignments()
                .iter()
                .filter(|(id, _)| id.starts_with(&prefix))
                .map(|(_, &fold)| fold)
                .collect();
            assert_eq!(folds.len(), 1, "family {f} split across folds");
        }
        let sizes = assignment.fold_sizes();
        let max = *sizes.iter().max().unwrap() as f64;
        let min = *sizes.iter().min().unwrap() as f64;
        assert!(max / min <= 1.5, "fold sizes {sizes:?}");
    }

    #[test]
    fn families_are_tight_and_far_apart() {
        let cfg = ToyConfig { records: 24, families: 4, ..ToyConfig::default() };
        let (corpus, _) = toy_dataset(&cfg).unwrap();
        let matrix = IdentityMatrix::from_corpus(&corpus).unwrap();
        let ids: Vec<&str> = corpus.records().iter().map(|r| r.id.as_str()).collect();
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                let same_family = ids[i][..5] == ids[j][..5];
                let identity = matrix.get(i, j);
                if same_family {
                    assert!(identity > 0.7, "{} vs {}: {identity}", ids[i], ids[j]);
                } else {
                    assert!(identity < 0.7, "{} vs {}: {identity}", ids[i], ids[j]);
                }
            }
        }
    }

    #[test]
    fn assay_values_track_their_sequence_signal() {
        let (corpus, table) = toy_dataset(&ToyConfig::default()).unwrap();
        let hydro_idx = table.assay_index("hydrophobicity").unwrap();
        let selfa_idx = table.assay_index("self_association").unwrap();
        let mut signal_h = Vec::new();
        let mut value_h = Vec::new();
        let mut signal_s = Vec::new();
        let mut value_s = Vec::new();
        let mut exact_hits = 0;
        for r in corpus.records() {
            let vh = table.value(&r.id, hydro_idx).unwrap();
            let vs = table.value(&r.id, selfa_idx).unwrap();
            let sh = hydrophobic_fraction(&r.heavy, &r.light);
            let ss = charged_polar_fraction(&r.heavy, &r.light);
            if vh == sh {
                exact_hits += 1;
            }
            signal_h.push(sh);
            value_h.push(vh);
            signal_s.push(ss);
            value_s.push(vs);
        }
        assert!(spearman(&signal_h, &value_h).unwrap() > 0.9);
        assert!(spearman(&signal_s, &value_s).unwrap() > 0.9);
        // Noise is actually applied.
        assert!(exact_hits < corpus.len() / 10);
    }

    #[test]
    fn signal_functions_frozen_examples() {
        assert_eq!(hydrophobic_fraction("FIL", "AAA"), 0.5);
        assert_eq!(charged_polar_fraction("KR", "AAAAAA"), 0.25);
        assert_eq!(hydrophobic_fraction("AC", "DE"), 0.0);
        assert_eq!(charged_polar_fraction("KRHQN", ""), 1.0);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let base = ToyConfig::default();
        for (cfg, why) in [
            (ToyConfig { families: 0, ..base }, "zero families"),
            (ToyConfig { records: 3, families: 4, ..base }, "fewer records than families"),
            (ToyConfig { heavy_len: (5, 4), ..base }, "inverted range"),
            (ToyConfig { light_len: (0, 4), ..base }, "zero length"),
            (ToyConfig { mutation_rate: 1.0, ..base }, "certain mutation"),
            (ToyConfig { noise_sd: f64::NAN, ..base }, "nan noise"),
        ] {
            let err = toy_dataset(&cfg).unwrap_err();
            assert_eq!(err.code(), "invalid-toy-config", "{why}");
        }
    }
}
