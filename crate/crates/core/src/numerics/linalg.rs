use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge strength relative to the mean eigenvalue, `trace / d`.
pub const RIDGE_SCALE: f64 = 1e-6;

/// Ridge `scale * trace(cov) / d`, floored so an all-zero covariance still
/// becomes invertible.
pub fn ridge(cov: &DMatrix<f64>, scale: f64) -> f64 {
    let d = cov.nrows().max(1) as f64;
    let lambda = scale * cov.trace() / d;
    if lambda > 0.0 {
        lambda
    } else {
        scale
    }
}

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance (denominator `n - 1`) and column means.
pub fn covariance(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = column_means(x);
    let mut centered = x.clone();
    for (mut col, m) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    let denom = (x.nrows().saturating_sub(1)).max(1) as f64;
    let mut cov = centered.tr_mul(&centered) / denom;
    symmetrize(&mut cov);
    (mean, cov)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn sym_power(m: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.powf(power)),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&scaled) * v.transpose())
}

/// Symmetric square root of a positive definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_power(m, 0.5)
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_power(m, -0.5)
}

/// Leading eigenvector of the centered covariance of the rows of `x`.
///
/// The returned vector has unit norm and its first nonzero coordinate is
/// positive.
pub fn top_principal_component(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(Error::Shape(format!(
            "need n >= 2 and d >= 1, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("principal component input"));
    }
    let (_, cov) = covariance(x);
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let eig = SymmetricEigen::new(cov);
    let top = eig.eigenvalues.imax();
    if eig.eigenvalues[top] <= 1e-12 * scale {
        return Err(Error::DegenerateSpectrum);
    }
    let mut v: DVector<f64> = eig.eigenvectors.column(top).normalize();
    let tol = 1e-12;
    if let Some(first) = v.iter().find(|c| c.abs() > tol) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    Ok(v)
}

/// A Gaussian fitted to feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

impl GaussianFit {
    /// Fits mean and sample covariance to the rows of `x`.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::Shape(format!(
                "Gaussian fit needs at least 2 rows, got {}",
                x.nrows()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gaussian fit input"));
        }
        let (mean, covariance) = covariance(x);
        Ok(Self {
            mean,
            covariance,
            count: x.nrows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}
