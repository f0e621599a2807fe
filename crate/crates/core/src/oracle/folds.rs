//! Identity-clustered fold assignment for cross-validation.
//!
//! Records are clustered by average-linkage agglomeration on
//! `1 - pairwise identity`, the tree is cut at a fixed linkage distance,
//! and whole clusters are dealt largest-first onto the currently smallest
//! fold. Related sequences therefore never straddle a train/test split.
//! Every tie-break is deterministic (lowest leaf index, lowest fold index),
//! so the assignment is a pure function of the corpus.

use super::OracleError;
use crate::corpus::PairedCorpus;
use crate::evalkit::IdentityMatrix;
use kodama::{linkage, Method};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_LINKAGE_CUT: f64 = 0.3;

/// A complete fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: BTreeMap<String, usize>,
    n_folds: usize,
    linkage_cut: f64,
    /// Leaf index sets of the clusters formed at the cut, each intact
    /// within a single fold.
    cluster_count: usize,
}

impl FoldAssignment {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.fold_of.get(id).copied()
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn linkage_cut(&self) -> f64 {
        self.linkage_cut
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_folds];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.fold_of
    }
}

/// Clusters at the cut: merge tree steps applied while linkage
/// dissimilarity stays at or below the cut. Average linkage is monotone,
/// so the qualifying steps form a prefix of the dendrogram.
fn clusters_at_cut(matrix: &IdentityMatrix, cut: f64) -> Vec<Vec<usize>> {
    let n = matrix.len();
    if n == 1 {
        return vec![vec![0]];
    }
    let mut condensed = matrix.condensed_distances();
    let dendrogram = linkage(&mut condensed, n, Method::Average);
    // Union-find over leaf labels 0..n-1 and step labels n..2n-2.
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, step) in dendrogram.steps().iter().enumerate() {
        if step.dissimilarity <= cut {
            let label = n + i;
            let a = find(&mut parent, step.cluster1);
            let b = find(&mut parent, step.cluster2);
            parent[a] = label;
            parent[b] = label;
        }
    }
    let mut by_root: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for leaf in 0..n {
        by_root.entry(find(&mut parent, leaf)).or_default().push(leaf);
    }
    let mut clusters: Vec<Vec<usize>> = by_root.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    // Largest first; ties by lowest member index.
    clusters.sort_by_key(|c| (usize::MAX - c.len(), c[0]));
    clusters
}

/// Assign corpus records to `k` identity-separated folds.
pub fn make_identity_folds(
    corpus: &PairedCorpus,
    k: usize,
    cut: f64,
) -> Result<FoldAssignment, OracleError> {
    if k == 0 || corpus.len() < k {
        return Err(OracleError::TooFewRecords {
            needed: k.max(1),
            found: corpus.len(),
        });
    }
    if !(0.0..=1.0).contains(&cut) {
        return Err(OracleError::InvalidCut(cut));
    }
    let matrix = IdentityMatrix::from_corpus(corpus)?;
    let clusters = clusters_at_cut(&matrix, cut);
    let mut sizes = vec![0usize; k];
    let mut fold_of = BTreeMap::new();
    for cluster in &clusters {
        // Smallest fold; ties to the lowest fold index.
        let fold = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap();
        sizes[fold] += cluster.len();
        for &leaf in cluster {
            fold_of.insert(matrix.ids()[leaf].clone(), fold);
        }
    }
    Ok(FoldAssignment {
        fold_of,
        n_folds: k,
        linkage_cut: cut,
        cluster_count: clusters.len(),
    })
}
