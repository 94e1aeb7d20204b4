use nalgebra::{Cholesky, DVector, Dyn, SymmetricEigen};
#[cfg(test)]
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::linalg::{ridge, GaussianFit, RIDGE_SCALE};
use crate::error::{Error, Result};

/// Extra ridge applied after removing the diagonal, relative to the
/// original `trace / d`.
const DIAG_SUB_MARGIN: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceVariant {
    Full,
    DiagSubtracted,
}

impl std::str::FromStr for CovarianceVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "diag_subtracted" | "diag-subtracted" => Ok(Self::DiagSubtracted),
            other => Err(Error::Invalid(format!("unknown covariance variant `{other}`"))),
        }
    }
}

/// Smallest acceptable ratio of squared Cholesky pivots before a ridge is added.
const MIN_PIVOT_RATIO: f64 = 1e-10;

fn well_conditioned(chol: &Cholesky<f64, Dyn>) -> bool {
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    hi > 0.0 && (lo / hi).powi(2) >= MIN_PIVOT_RATIO
}

/// Mahalanobis distance with a pre-factored covariance.
#[derive(Debug, Clone)]
pub struct MahalanobisScorer {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl MahalanobisScorer {
    pub fn new(fit: &GaussianFit, variant: CovarianceVariant) -> Result<Self> {
        let d = fit.dim();
        if fit.covariance.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "mean has length {d} but covariance is {:?}",
                fit.covariance.shape()
            )));
        }
        let mut cov = fit.covariance.clone();
        match variant {
            CovarianceVariant::Full => {
                // Ridge only when needed, so well-conditioned fits stay exactly
                // affine invariant.
                if let Some(chol) = Cholesky::new(cov.clone()).filter(well_conditioned) {
                    return Ok(Self {
                        mean: fit.mean.clone(),
                        chol,
                    });
                }
                let lambda = ridge(&cov, RIDGE_SCALE);
                for i in 0..d {
                    cov[(i, i)] += lambda;
                }
            }
            CovarianceVariant::DiagSubtracted => {
                // Zeroing the diagonal leaves a trace-zero, indefinite matrix;
                // shift it just past its smallest eigenvalue.
                let base = ridge(&fit.covariance, DIAG_SUB_MARGIN);
                for i in 0..d {
                    cov[(i, i)] = 0.0;
                }
                let min = SymmetricEigen::new(cov.clone()).eigenvalues.min();
                let shift = (-min).max(0.0) + base;
                for i in 0..d {
                    cov[(i, i)] += shift;
                }
            }
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| Error::NotPositiveDefinite {
            min_eigenvalue: SymmetricEigen::new(cov).eigenvalues.min(),
        })?;
        Ok(Self {
            mean: fit.mean.clone(),
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "feature length {} but detector dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let diff = x - &self.mean;
        let mut z = diff.clone();
        self.chol.l().solve_lower_triangular_mut(&mut z);
        Ok(z.norm_squared().max(0.0).sqrt())
    }
}

/// `sqrt((x - mu)^T S^{-1} (x - mu))` with `S` the (variant-adjusted,
/// ridge-regularized) covariance of `fit`.
pub fn mahalanobis(x: &DVector<f64>, fit: &GaussianFit, variant: CovarianceVariant) -> Result<f64> {
    MahalanobisScorer::new(fit, variant)?.distance(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fit_of(mean: Vec<f64>, cov: DMatrix<f64>) -> GaussianFit {
        GaussianFit {
            mean: DVector::from_vec(mean),
            covariance: cov,
            count: 10,
        }
    }

    // The exact-value cases below use a covariance whose ridge is negligible
    // at the stated precision.
    #[test]
    fn euclidean_case() {
        let fit = fit_of(vec![0.0, 0.0], DMatrix::identity(2, 2));
        let d = mahalanobis(&DVector::from_vec(vec![3.0, 4.0]), &fit, CovarianceVariant::Full).unwrap();
        assert!((d - 5.0).abs() < 1e-5);
    }

    #[test]
    fn diagonal_case() {
        let fit = fit_of(vec![0.0, 0.0], DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])));
        let d = mahalanobis(&DVector::from_vec(vec![2.0, 1.0]), &fit, CovarianceVariant::Full).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-5);
    }

    #[test]
    fn matches_linear_solve_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = 6;
        let a = DMatrix::<f64>::from_fn(12, d, |_, _| StandardNormal.sample(&mut rng));
        let cov = a.tr_mul(&a) / 12.0 + DMatrix::identity(d, d) * 0.5;
        let mean = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let x = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let fit = GaussianFit { mean: mean.clone(), covariance: cov.clone(), count: 12 };
        let got = mahalanobis(&x, &fit, CovarianceVariant::Full).unwrap();

        // well conditioned, so no ridge: plain LU solve
        let diff = &x - &mean;
        let y = cov.clone().lu().solve(&diff).unwrap();
        let expected = diff.dot(&y);
        assert!((got * got - expected).abs() <= 1e-10 * expected);
    }

    #[test]
    fn zero_at_the_mean_for_both_variants() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.5]);
        let fit = fit_of(vec![1.0, -2.0, 0.5], cov);
        for v in [CovarianceVariant::Full, CovarianceVariant::DiagSubtracted] {
            assert_eq!(mahalanobis(&fit.mean.clone(), &fit, v).unwrap(), 0.0);
        }
    }

    #[test]
    fn singular_covariance_gets_the_ridge() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let fit = fit_of(vec![0.0, 0.0], cov.clone());
        let x = DVector::from_vec(vec![1.0, -1.0]);
        let got = mahalanobis(&x, &fit, CovarianceVariant::Full).unwrap();
        let lambda = ridge(&cov, RIDGE_SCALE);
        // x is the null direction of cov, so only the ridge scales it
        assert!((got - (2.0 / lambda).sqrt()).abs() < 1e-6 * got);
    }

    #[test]
    fn affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d) = (200, 5);
        let x = DMatrix::<f64>::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng)) + DMatrix::identity(d, d) * 3.0;
        let shift = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let mut y = &x * a.transpose();
        for mut row in y.row_iter_mut() {
            row += shift.transpose();
        }
        let sx = MahalanobisScorer::new(&GaussianFit::fit(&x).unwrap(), CovarianceVariant::Full).unwrap();
        let sy = MahalanobisScorer::new(&GaussianFit::fit(&y).unwrap(), CovarianceVariant::Full).unwrap();
        for i in 0..20 {
            let dx = sx.distance(&x.row(i).transpose()).unwrap();
            let dy = sy.distance(&y.row(i).transpose()).unwrap();
            assert!((dx - dy).abs() < 1e-8, "{dx} vs {dy}");
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        let fit = fit_of(vec![0.0, 0.0], cov);
        match MahalanobisScorer::new(&fit, CovarianceVariant::Full) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert!(min_eigenvalue < 0.0),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }
}
