use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linalg::{covariance, ridge, sym_inv_sqrt, sym_sqrt, RIDGE_SCALE};
use crate::error::{Error, Result};

/// Whitened class-mean gaps at or below this are treated as already erased.
const IDENTITY_GAP: f64 = 1e-9;

/// Rank-one affine eraser `x' = x - left * <right, x - mean>`.
///
/// With `u` the unit whitened mean-difference direction and `S` the total
/// covariance, `left = S^{1/2} u` and `right = S^{-1/2} u`. A `None` basis is
/// the identity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEraser {
    #[serde(rename = "mu")]
    pub mean: Vec<f64>,
    pub basis: Option<[Vec<f64>; 2]>,
}

impl ConceptEraser {
    /// Fits the eraser for a binary concept over the rows of `x`.
    pub fn fit(x: &DMatrix<f64>, concept: &[u8]) -> Result<Self> {
        let (n, d) = x.shape();
        if concept.len() != n {
            return Err(Error::Shape(format!(
                "{n} rows but {} concept labels",
                concept.len()
            )));
        }
        let n_pos = concept.iter().filter(|&&c| c == 1).count();
        if concept.iter().any(|&c| c > 1) {
            return Err(Error::Invalid("concept labels must be 0/1".into()));
        }
        let (mean, mut cov) = covariance(x);
        if n_pos == 0 || n_pos == n {
            return Ok(Self::identity(mean));
        }

        let mut mu1 = DVector::zeros(d);
        let mut mu0 = DVector::zeros(d);
        for (row, &c) in x.row_iter().zip(concept) {
            if c == 1 {
                mu1 += row.transpose();
            } else {
                mu0 += row.transpose();
            }
        }
        mu1 /= n_pos as f64;
        mu0 /= (n - n_pos) as f64;

        let lambda = ridge(&cov, RIDGE_SCALE);
        for i in 0..d {
            cov[(i, i)] += lambda;
        }
        let inv_sqrt = sym_inv_sqrt(&cov)?;
        let whitened_gap = &inv_sqrt * (mu1 - mu0);
        let gap_norm = whitened_gap.norm();
        if gap_norm <= IDENTITY_GAP {
            return Ok(Self::identity(mean));
        }
        let u = whitened_gap / gap_norm;
        let left = sym_sqrt(&cov)? * &u;
        let right = inv_sqrt * &u;
        Ok(Self {
            mean: mean.iter().copied().collect(),
            basis: Some([left.iter().copied().collect(), right.iter().copied().collect()]),
        })
    }

    fn identity(mean: DVector<f64>) -> Self {
        Self {
            mean: mean.iter().copied().collect(),
            basis: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.basis.is_none()
    }

    /// Applies the eraser to every row of `x`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "eraser has width {} but input has {} columns",
                self.dim(),
                x.ncols()
            )));
        }
        let Some([left, right]) = &self.basis else {
            return Ok(x.clone());
        };
        let mut out = x.clone();
        for mut row in out.row_iter_mut() {
            let coef: f64 = row
                .iter()
                .zip(&self.mean)
                .zip(right)
                .map(|((v, m), r)| (v - m) * r)
                .sum();
            for (v, l) in row.iter_mut().zip(left) {
                *v -= coef * l;
            }
        }
        Ok(out)
    }
}

/// Removes linearly available information about a binary concept so that
/// both concept classes share the same mean.
pub fn erase_binary_concept(x: &DMatrix<f64>, concept: &[u8]) -> Result<DMatrix<f64>> {
    ConceptEraser::fit(x, concept)?.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn class_gap(x: &DMatrix<f64>, concept: &[u8]) -> f64 {
        let d = x.ncols();
        let (mut m1, mut m0) = (DVector::zeros(d), DVector::zeros(d));
        let (mut n1, mut n0) = (0.0, 0.0);
        for (row, &c) in x.row_iter().zip(concept) {
            if c == 1 {
                m1 += row.transpose();
                n1 += 1.0;
            } else {
                m0 += row.transpose();
                n0 += 1.0;
            }
        }
        (m1 / n1 - m0 / n0).norm()
    }

    fn two_class(seed: u64, n: usize) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let concept: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let shift = if j == 0 { if concept[i] == 1 { 1.0 } else { -1.0 } } else { 0.0 };
            z + shift
        });
        (x, concept)
    }

    #[test]
    fn equalizes_class_means() {
        let (x, concept) = two_class(1, 500);
        assert!(class_gap(&x, &concept) > 1.5);
        let erased = erase_binary_concept(&x, &concept).unwrap();
        assert!(class_gap(&erased, &concept) <= 1e-6);
    }

    #[test]
    fn constant_concept_is_identity() {
        let (x, _) = two_class(2, 50);
        let erased = erase_binary_concept(&x, &[1; 50]).unwrap();
        assert_eq!(erased, x);
    }

    #[test]
    fn idempotent() {
        let (x, concept) = two_class(3, 400);
        let once = erase_binary_concept(&x, &concept).unwrap();
        let twice = erase_binary_concept(&once, &concept).unwrap();
        assert!((&twice - &once).norm() <= 1e-8 * once.norm());
    }
}
