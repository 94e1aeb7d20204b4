use nalgebra::{DMatrix, DVector};

use super::{check_finite, check_labels, class_means, Method, Probe};
use crate::error::{Error, Result};

const LDA_RIDGE: f64 = 1e-3;

fn midpoint_bias(w: &DVector<f64>, m1: &DVector<f64>, m0: &DVector<f64>) -> f64 {
    -w.dot(&(m1 + m0)) / 2.0
}

/// `w = mu1 - mu0` (unnormalized), `b` centered between the class means.
pub fn train_diff_means(x: &DMatrix<f64>, labels: &[u8]) -> Result<Probe> {
    check_labels(x.nrows(), labels)?;
    check_finite(x)?;
    let (m1, m0) = class_means(x, labels);
    let w = &m1 - &m0;
    let scale = m1.norm().max(m0.norm()).max(f64::MIN_POSITIVE);
    if w.norm() < 1e-12 * scale {
        return Err(Error::DegenerateDirection);
    }
    let b = midpoint_bias(&w, &m1, &m0);
    Ok(Probe::new(Method::DiffMeans, 0, w, b))
}

/// Pooled within-class covariance, ridged by `1e-3 * trace / d`.
pub(crate) fn pooled_covariance(x: &DMatrix<f64>, labels: &[u8]) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let (m1, m0) = class_means(x, labels);
    let mut centered = x.clone();
    for (mut row, &y) in centered.row_iter_mut().zip(labels) {
        let m = if y == 1 { &m1 } else { &m0 };
        row -= m.transpose();
    }
    let dof = n.saturating_sub(2).max(1) as f64;
    let mut cov = centered.tr_mul(&centered) / dof;
    let lambda = LDA_RIDGE * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += lambda;
    }
    cov
}

/// Fisher discriminant `w = (S_pooled + lambda I)^-1 (mu1 - mu0)`.
pub fn train_lda(x: &DMatrix<f64>, labels: &[u8]) -> Result<Probe> {
    let (n, d) = x.shape();
    check_labels(n, labels)?;
    check_finite(x)?;
    if n <= d {
        log::warn!("LDA with n = {n} <= d = {d}; relying on the ridge");
    }
    let (m1, m0) = class_means(x, labels);
    let cov = pooled_covariance(x, labels);
    let gap = &m1 - &m0;
    let w = cov
        .cholesky()
        .map(|c| c.solve(&gap))
        .ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: f64::NAN,
        })?;
    if w.norm() == 0.0 {
        return Err(Error::DegenerateDirection);
    }
    let b = midpoint_bias(&w, &m1, &m0);
    Ok(Probe::new(Method::Lda, 0, w, b))
}
