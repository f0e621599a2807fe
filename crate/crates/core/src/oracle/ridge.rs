//! Standardization and the closed-form ridge solve.
//!
//! The solve is exact: centered Gram system `(Xc'Xc + aI) w = Xc' yc` via
//! Cholesky, intercept = mean(y). Every fit checks its own stationarity
//! residual so a silently ill-conditioned solve cannot slip through.

use super::OracleError;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Stds below this are treated as constant columns and left unscaled.
pub const STD_FLOOR: f64 = 1e-8;

/// Max allowed infinity-norm of the normal-equation residual per fit.
pub const STATIONARITY_TOL: f64 = 1e-8;

/// Per-column affine map to zero mean, unit variance (population variance).
/// Constant columns keep scale 1 so transformed values are exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self, OracleError> {
        if rows.len() < 2 {
            return Err(OracleError::TooFewSamples {
                needed: 2,
                found: rows.len(),
            });
        }
        let dim = rows[0].len();
        for row in rows {
            if row.len() != dim {
                return Err(OracleError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(OracleError::NonFiniteInput);
            }
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d / n;
            }
        }
        let std = var
            .iter()
            .map(|&v| {
                let s = v.sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, OracleError> {
        if x.len() != self.dim() {
            return Err(OracleError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn transform_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, OracleError> {
        rows.iter().map(|r| self.transform(r)).collect()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

/// Result of one ridge solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Infinity-norm of `(Xc'Xc + aI) w - Xc' yc`, checked against
    /// [`STATIONARITY_TOL`] on every fit.
    pub stationarity_residual: f64,
}

/// Solve ridge regression in closed form.
///
/// Rows are feature vectors, one per sample; `y` the targets. Requires
/// `alpha > 0` (the Gram system is then positive definite for any data).
pub fn fit_ridge(rows: &[Vec<f64>], y: &[f64], alpha: f64) -> Result<RidgeFit, OracleError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(OracleError::NonPositiveAlpha(alpha));
    }
    if rows.len() != y.len() {
        return Err(OracleError::DimensionMismatch {
            expected: rows.len(),
            found: y.len(),
        });
    }
    if rows.len() < 2 {
        return Err(OracleError::TooFewSamples {
            needed: 2,
            found: rows.len(),
        });
    }
    let dim = rows[0].len();
    if dim == 0 {
        return Err(OracleError::EmptyTable);
    }
    for row in rows {
        if row.len() != dim {
            return Err(OracleError::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(OracleError::NonFiniteInput);
    }

    let n = rows.len();
    let x = DMatrix::from_row_iterator(n, dim, rows.iter().flatten().copied());
    let col_means = x.row_mean();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= &col_means;
    }
    let intercept = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - intercept));

    let mut gram = xc.tr_mul(&xc);
    for i in 0..dim {
        gram[(i, i)] += alpha;
    }
    let rhs = xc.tr_mul(&yc);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(OracleError::SingularSystem)?;
    let w = chol.solve(&rhs);

    let residual = (&gram * &w - &rhs).amax();
    debug_assert!(
        residual < STATIONARITY_TOL,
        "stationarity residual {residual} out of tolerance"
    );

    Ok(RidgeFit {
        weights: w.iter().copied().collect(),
        intercept,
        stationarity_residual: residual,
    })
}

/// Recompute the normal-equation residual for a given weight vector.
/// Exposed so tests can audit a fit independently of [`fit_ridge`].
pub fn stationarity_residual(rows: &[Vec<f64>], y: &[f64], alpha: f64, weights: &[f64]) -> f64 {
    let n = rows.len();
    let dim = weights.len();
    let x = DMatrix::from_row_iterator(n, dim, rows.iter().flatten().copied());
    let col_means = x.row_mean();
    let mut xc = x;
    for mut row in xc.row_iter_mut() {
        row -= &col_means;
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = xc.tr_mul(&xc);
    for i in 0..dim {
        gram[(i, i)] += alpha;
    }
    let rhs = xc.tr_mul(&yc);
    let w = DVector::from_column_slice(weights);
    (&gram * &w - &rhs).amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standardizer_frozen_example() {
        // Single feature {0, 2}: mean 1, population std 1.
        let s = Standardizer::fit(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(s.mean(), &[1.0]);
        assert_eq!(s.std(), &[1.0]);
        assert_eq!(s.transform(&[2.0]).unwrap(), vec![1.0]);
        assert_eq!(s.transform(&[0.0]).unwrap(), vec![-1.0]);
    }

    #[test]
    fn standardizer_floors_constant_columns() {
        let s = Standardizer::fit(&[vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(s.std()[0], 1.0);
        // Constant column transforms to exactly zero.
        assert_eq!(s.transform(&[3.0, 2.0]).unwrap()[0], 0.0);
    }

    #[test]
    fn standardizer_rejects_degenerate_input() {
        assert_eq!(
            Standardizer::fit(&[vec![1.0]]).unwrap_err().code(),
            "too-few-samples"
        );
        assert_eq!(
            Standardizer::fit(&[vec![1.0], vec![1.0, 2.0]])
                .unwrap_err()
                .code(),
            "dimension-mismatch"
        );
        assert_eq!(
            Standardizer::fit(&[vec![f64::NAN], vec![1.0]])
                .unwrap_err()
                .code(),
            "non-finite-input"
        );
        let s = Standardizer::fit(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(
            s.transform(&[1.0, 2.0]).unwrap_err().code(),
            "dimension-mismatch"
        );
    }

    #[test]
    fn ridge_frozen_one_dimensional() {
        // x = [-1, 1], y = [-1, 1], alpha = 0.1:
        // w = sum(xc*yc) / (sum(xc^2) + alpha) = 2 / 2.1.
        let fit = fit_ridge(&[vec![-1.0], vec![1.0]], &[-1.0, 1.0], 0.1).unwrap();
        assert!((fit.weights[0] - 0.9523809523809523).abs() < 1e-15);
        assert_eq!(fit.intercept, 0.0);
        assert!(fit.stationarity_residual < STATIONARITY_TOL);
    }

    #[test]
    fn ridge_constant_targets_give_zero_weights() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 1.0]];
        let fit = fit_ridge(&rows, &[7.0, 7.0, 7.0], 0.1).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        assert_eq!(fit.intercept, 7.0);
    }

    #[test]
    fn ridge_intercept_is_target_mean() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let fit = fit_ridge(&rows, &[1.0, 2.0, 6.0], 0.5).unwrap();
        assert!((fit.intercept - 3.0).abs() < 1e-15);
    }

    #[test]
    fn ridge_rejects_bad_input() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert_eq!(
            fit_ridge(&rows, &[1.0, 2.0], 0.0).unwrap_err().code(),
            "non-positive-alpha"
        );
        assert_eq!(
            fit_ridge(&rows, &[1.0, 2.0], -1.0).unwrap_err().code(),
            "non-positive-alpha"
        );
        assert_eq!(
            fit_ridge(&rows, &[1.0, 2.0], f64::NAN).unwrap_err().code(),
            "non-positive-alpha"
        );
        assert_eq!(
            fit_ridge(&rows, &[1.0], 0.1).unwrap_err().code(),
            "dimension-mismatch"
        );
        assert_eq!(
            fit_ridge(&[vec![1.0]], &[1.0], 0.1).unwrap_err().code(),
            "too-few-samples"
        );
        assert_eq!(
            fit_ridge(&rows, &[1.0, f64::INFINITY], 0.1)
                .unwrap_err()
                .code(),
            "non-finite-input"
        );
    }

    #[test]
    fn ridge_interpolates_exactly_solvable_system() {
        // y = 2*x0 - x1 + 3 with tiny alpha: weights approach the truth.
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i % 5) as f64, (i % 3) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[1] + 3.0).collect();
        let fit = fit_ridge(&rows, &y, 1e-9).unwrap();
        assert!((fit.weights[0] - 2.0).abs() < 1e-5);
        assert!((fit.weights[1] + 1.0).abs() < 1e-5);
        assert!((fit.intercept - (y.iter().sum::<f64>() / 20.0)).abs() < 1e-12);
    }

    #[test]
    fn independent_residual_audit_agrees() {
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![(i as f64).sin(), (i as f64).cos(), (i % 4) as f64])
            .collect();
        let y: Vec<f64> = (0..12).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let fit = fit_ridge(&rows, &y, 0.1).unwrap();
        let audited = stationarity_residual(&rows, &y, 0.1, &fit.weights);
        assert!(audited < STATIONARITY_TOL, "audited residual {audited}");
        // Perturbing a weight must blow up the residual.
        let mut bad = fit.weights.clone();
        bad[0] += 0.5;
        assert!(stationarity_residual(&rows, &y, 0.1, &bad) > 1e-3);
    }

    proptest! {
        /// Increasing alpha never increases the weight norm (shrinkage).
        #[test]
        fn shrinkage_is_monotone(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let n = rng.random_range(4..20);
            let d = rng.random_range(1..6);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let mut prev = f64::INFINITY;
            for alpha in [1e-4, 1e-2, 0.1, 1.0, 10.0, 1e3] {
                let fit = fit_ridge(&rows, &y, alpha).unwrap();
                let norm: f64 = fit.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
                prop_assert!(norm <= prev + 1e-9, "alpha {alpha}: {norm} > {prev}");
                prev = norm;
            }
        }

        /// Every solve meets the stationarity tolerance.
        #[test]
        fn stationarity_holds_on_random_systems(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0xABCD);
            let n = rng.random_range(3..25);
            let d = rng.random_range(1..8);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let fit = fit_ridge(&rows, &y, 0.1).unwrap();
            prop_assert!(fit.stationarity_residual < STATIONARITY_TOL);
            prop_assert!(fit.weights.iter().all(|w| w.is_finite()));
        }

        /// Standardized columns have zero mean and unit variance.
        #[test]
        fn standardizer_output_is_standardized(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed ^ 0x5EED);
            let n = rng.random_range(3..30);
            let d = rng.random_range(1..5);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.random::<f64>() * 10.0).collect())
                .collect();
            let s = Standardizer::fit(&rows).unwrap();
            let t = s.transform_rows(&rows).unwrap();
            for j in 0..d {
                let mean: f64 = t.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                let var: f64 = t.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
                prop_assert!(mean.abs() < 1e-9);
                // Columns that happened to be constant stay at variance 0.
                prop_assert!(var.abs() < 1e-9 || (var - 1.0).abs() < 1e-9);
            }
        }
    }
}
