//! Assay oracles: featurization, standardization, closed-form ridge
//! regression, and identity-clustered cross-validation.
//!
//! An oracle predicts one assay readout from a chain pair. Fitting
//! standardizes features (train statistics only) and solves ridge exactly;
//! evaluation assigns whole identity clusters to folds so that reported
//! correlations measure generalization across families rather than
//! memorization within them.

mod corr;
mod features;
mod folds;
mod ridge;

pub use corr::{average_ranks, pearson, spearman};
pub use features::{
    bigram_index, ExternalFeatures, FeatureVector, Featurizer, KmerFeaturizer, KMER_CHAIN_DIM,
    KMER_DIM, KMER_SCHEME_ID,
};
pub use folds::{make_identity_folds, FoldAssignment, DEFAULT_FOLDS, DEFAULT_LINKAGE_CUT};
pub use ridge::{
    fit_ridge, stationarity_residual, RidgeFit, Standardizer, STATIONARITY_TOL, STD_FLOOR,
};

use crate::corpus::{AssayTable, CorpusRecord, PairedCorpus};
use crate::evalkit::EvalError;
use crate::seq::SeqError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("need at least {needed} records, found {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature scheme mismatch: oracle fit on {expected}, got {found}")]
    SchemeMismatch { expected: String, found: String },
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("non-finite feature value for id {id}")]
    NonFiniteFeature { id: String },
    #[error("ridge penalty must be positive and finite, got {0}")]
    NonPositiveAlpha(f64),
    #[error("gram system is not positive definite")]
    SingularSystem,
    #[error("feature table is empty")]
    EmptyTable,
    #[error("feature table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("no features for id {id}")]
    MissingFeatures { id: String },
    #[error("scheme {scheme} cannot featurize raw sequences")]
    SequenceQueryUnsupported { scheme: String },
    #[error("linkage cut {0} outside [0, 1]")]
    InvalidCut(f64),
    #[error("unknown assay {0}")]
    AssayUnknown(String),
    #[error("every fold was skipped")]
    AllFoldsSkipped,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl OracleError {
    pub fn code(&self) -> &'static str {
        match self {
            OracleError::TooFewSamples { .. } => "too-few-samples",
            OracleError::TooFewRecords { .. } => "too-few-records",
            OracleError::DimensionMismatch { .. } => "dimension-mismatch",
            OracleError::SchemeMismatch { .. } => "scheme-mismatch",
            OracleError::NonFiniteInput => "non-finite-input",
            OracleError::NonFiniteFeature { .. } => "non-finite-feature",
            OracleError::NonPositiveAlpha(_) => "non-positive-alpha",
            OracleError::SingularSystem => "singular-system",
            OracleError::EmptyTable => "empty-table",
            OracleError::Table { .. } => "bad-table",
            OracleError::MissingFeatures { .. } => "missing-features",
            OracleError::SequenceQueryUnsupported { .. } => "sequence-query-unsupported",
            OracleError::InvalidCut(_) => "invalid-cut",
            OracleError::AssayUnknown(_) => "unknown-assay",
            OracleError::AllFoldsSkipped => "all-folds-skipped",
            OracleError::Eval(e) => e.code(),
            OracleError::Seq(e) => e.code(),
            OracleError::Io(_) => "io",
        }
    }
}

/// A fitted ridge oracle for one assay. Immutable once fit; safe to share
/// across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeOracle {
    pub assay: String,
    pub alpha: f64,
    pub scheme_id: String,
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub stationarity_residual: f64,
}

impl RidgeOracle {
    /// Fit on featurized records. The standardizer sees training rows only.
    pub fn fit(
        assay: impl Into<String>,
        featurizer: &dyn Featurizer,
        records: &[&CorpusRecord],
        targets: &[f64],
        alpha: f64,
    ) -> Result<Self, OracleError> {
        if records.len() != targets.len() {
            return Err(OracleError::DimensionMismatch {
                expected: records.len(),
                found: targets.len(),
            });
        }
        let mut rows = Vec::with_capacity(records.len());
        for r in records {
            let fv = featurizer.features_for_record(&r.id, &r.heavy, &r.light)?;
            rows.push(fv.values);
        }
        let standardizer = Standardizer::fit(&rows)?;
        let standardized = standardizer.transform_rows(&rows)?;
        let fit = fit_ridge(&standardized, targets, alpha)?;
        Ok(RidgeOracle {
            assay: assay.into(),
            alpha,
            scheme_id: featurizer.scheme_id().to_string(),
            standardizer,
            weights: fit.weights,
            intercept: fit.intercept,
            stationarity_residual: fit.stationarity_residual,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Predict from an already-computed feature vector.
    pub fn predict_vector(&self, fv: &FeatureVector) -> Result<f64, OracleError> {
        if fv.scheme_id != self.scheme_id {
            return Err(OracleError::SchemeMismatch {
                expected: self.scheme_id.clone(),
                found: fv.scheme_id.clone(),
            });
        }
        let z = self.standardizer.transform(&fv.values)?;
        Ok(self.intercept + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn predict_sequence(
        &self,
        featurizer: &dyn Featurizer,
        heavy: &str,
        light: &str,
    ) -> Result<f64, OracleError> {
        self.check_featurizer(featurizer)?;
        self.predict_vector(&featurizer.features_for_sequence(heavy, light)?)
    }

    pub fn predict_record(
        &self,
        featurizer: &dyn Featurizer,
        record: &CorpusRecord,
    ) -> Result<f64, OracleError> {
        self.check_featurizer(featurizer)?;
        self.predict_vector(&featurizer.features_for_record(
            &record.id,
            &record.heavy,
            &record.light,
        )?)
    }

    /// Predictions for every corpus record, keyed by id.
    pub fn predict_corpus(
        &self,
        featurizer: &dyn Featurizer,
        corpus: &PairedCorpus,
    ) -> Result<BTreeMap<String, f64>, OracleError> {
        corpus
            .records()
            .iter()
            .map(|r| Ok((r.id.clone(), self.predict_record(featurizer, r)?)))
            .collect()
    }

    fn check_featurizer(&self, featurizer: &dyn Featurizer) -> Result<(), OracleError> {
        if featurizer.scheme_id() != self.scheme_id {
            return Err(OracleError::SchemeMismatch {
                expected: self.scheme_id.clone(),
                found: featurizer.scheme_id().to_string(),
            });
        }
        Ok(())
    }
}

/// One fold's evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
    pub skipped: bool,
    pub skip_reason: Option<String>,
    /// The standardizer the fold's model actually used, exposed so leakage
    /// (fitting on test rows) is auditable after the fact.
    pub standardizer: Option<Standardizer>,
}

/// Cross-validation summary for one assay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub assay: String,
    pub alpha: f64,
    pub folds: Vec<FoldReport>,
    pub folds_used: usize,
    /// Mean and sd across folds where the metric is defined; sd is the
    /// sample standard deviation (n-1), zero when only one fold counts.
    pub spearman_mean: Option<f64>,
    pub spearman_sd: Option<f64>,
    pub pearson_mean: Option<f64>,
    pub pearson_sd: Option<f64>,
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

/// Fit and score one oracle per fold.
///
/// Only ids labeled for the assay participate. A fold is skipped (with a
/// recorded reason) when it has fewer than 3 labeled test points or fewer
/// than 2 labeled training points; if every fold is skipped the report is
/// an error.
pub fn crossval_report(
    corpus: &PairedCorpus,
    table: &AssayTable,
    assay: &str,
    assignment: &FoldAssignment,
    featurizer: &dyn Featurizer,
    alpha: f64,
) -> Result<CrossvalReport, OracleError> {
    let assay_idx = table
        .assay_index(assay)
        .map_err(|_| OracleError::AssayUnknown(assay.to_string()))?;
    // Labeled records that have a fold.
    let mut labeled: Vec<(&CorpusRecord, usize, f64)> = Vec::new();
    for record in corpus.records() {
        let Some(fold) = assignment.fold_of(&record.id) else {
            continue;
        };
        if let Some(value) = table.value(&record.id, assay_idx) {
            labeled.push((record, fold, value));
        }
    }
    let mut folds = Vec::with_capacity(assignment.n_folds());
    for f in 0..assignment.n_folds() {
        let test: Vec<_> = labeled.iter().filter(|(_, fold, _)| *fold == f).collect();
        let train: Vec<_> = labeled.iter().filter(|(_, fold, _)| *fold != f).collect();
        let skip_reason = if test.len() < 3 {
            Some(format!("{} labeled test points, need 3", test.len()))
        } else if train.len() < 2 {
            Some(format!("{} labeled training points, need 2", train.len()))
        } else {
            None
        };
        if let Some(reason) = skip_reason {
            folds.push(FoldReport {
                fold: f,
                train_count: train.len(),
                test_count: test.len(),
                spearman: None,
                pearson: None,
                skipped: true,
                skip_reason: Some(reason),
                standardizer: None,
            });
            continue;
        }
        let train_records: Vec<&CorpusRecord> = train.iter().map(|(r, _, _)| *r).collect();
        let train_targets: Vec<f64> = train.iter().map(|(_, _, y)| *y).collect();
        let oracle = RidgeOracle::fit(assay, featurizer, &train_records, &train_targets, alpha)?;
        let mut preds = Vec::with_capacity(test.len());
        let mut targets = Vec::with_capacity(test.len());
        for (record, _, y) in &test {
            preds.push(oracle.predict_record(featurizer, record)?);
            targets.push(*y);
        }
        folds.push(FoldReport {
            fold: f,
            train_count: train.len(),
            test_count: test.len(),
            spearman: spearman(&preds, &targets),
            pearson: pearson(&preds, &targets),
            skipped: false,
            skip_reason: None,
            standardizer: Some(oracle.standardizer.clone()),
        });
    }
    let folds_used = folds.iter().filter(|r| !r.skipped).count();
    if folds_used == 0 {
        return Err(OracleError::AllFoldsSkipped);
    }
    let s: Vec<f64> = folds.iter().filter_map(|r| r.spearman).collect();
    let p: Vec<f64> = folds.iter().filter_map(|r| r.pearson).collect();
    let (spearman_mean, spearman_sd) = match mean_sd(&s) {
        Some((m, sd)) => (Some(m), Some(sd)),
        None => (None, None),
    };
    let (pearson_mean, pearson_sd) = match mean_sd(&p) {
        Some((m, sd)) => (Some(m), Some(sd)),
        None => (None, None),
    };
    Ok(CrossvalReport {
        assay: assay.to_string(),
        alpha,
        folds,
        folds_used,
        spearman_mean,
        spearman_sd,
        pearson_mean,
        pearson_sd,
    })
}
