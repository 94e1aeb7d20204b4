use nalgebra::{DMatrix, DVector};

use super::{check_finite, check_labels, Method, Probe};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;

pub const LOGR_L2: f64 = 1e-3;
const GRAD_TOL: f64 = 1e-6;
const MAX_ITER: usize = 100;

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a> {
    xa: DMatrix<f64>,
    y: &'a [u8],
    l2: f64,
    d: usize,
}

impl Problem<'_> {
    fn loss(&self, theta: &DVector<f64>) -> f64 {
        let z = &self.xa * theta;
        let n = self.y.len() as f64;
        let data: f64 = z
            .iter()
            .zip(self.y)
            .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
            .sum::<f64>()
            / n;
        data + 0.5 * self.l2 * theta.rows(0, self.d).norm_squared()
    }

    fn grad_hess(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let z = &self.xa * theta;
        let n = self.y.len() as f64;
        let resid = DVector::from_iterator(
            z.len(),
            z.iter().zip(self.y).map(|(&z, &y)| (sigmoid(z) - f64::from(y)) / n),
        );
        let mut grad = self.xa.tr_mul(&resid);
        let mut weighted = self.xa.clone();
        for (mut row, &zi) in weighted.row_iter_mut().zip(z.iter()) {
            let p = sigmoid(zi);
            row *= (p * (1.0 - p) / n).sqrt();
        }
        let mut hess = weighted.tr_mul(&weighted);
        for j in 0..self.d {
            grad[j] += self.l2 * theta[j];
            hess[(j, j)] += self.l2;
        }
        // The bias is unpenalized; keep its curvature away from zero.
        hess[(self.d, self.d)] += 1e-12;
        (grad, hess)
    }
}

/// L2-penalized logistic regression by damped Newton from `w = 0, b = 0`.
///
/// Minimizes the mean cross-entropy plus `l2 * |w|^2 / 2`; the bias is not
/// penalized.
pub fn train_logr(x: &DMatrix<f64>, labels: &[u8], l2: f64) -> Result<Probe> {
    let (n, d) = x.shape();
    if n <= 2 {
        return Err(Error::Shape(format!("logistic regression needs n > 2, got {n}")));
    }
    check_labels(n, labels)?;
    check_finite(x)?;
    if !(l2 >= 0.0) {
        return Err(Error::Invalid(format!("l2 must be non-negative, got {l2}")));
    }
    let mut xa = DMatrix::from_element(n, d + 1, 1.0);
    xa.view_mut((0, 0), (n, d)).copy_from(x);
    let problem = Problem { xa, y: labels, l2, d };

    let mut theta = DVector::zeros(d + 1);
    let mut loss = problem.loss(&theta);
    for _ in 0..MAX_ITER {
        let (grad, hess) = problem.grad_hess(&theta);
        if grad.amax() < GRAD_TOL {
            break;
        }
        let step = match hess.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => hess
                .lu()
                .solve(&grad)
                .ok_or_else(|| Error::Invalid("singular logistic Hessian".into()))?,
        };
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let candidate = &theta - &step * t;
            let cand_loss = problem.loss(&candidate);
            if cand_loss <= loss - 1e-4 * t * slope || t < 1e-10 {
                theta = candidate;
                loss = cand_loss;
                break;
            }
            t *= 0.5;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("logistic loss"));
        }
    }
    let w = theta.rows(0, d).into_owned();
    Ok(Probe::new(Method::Logr, 0, w, theta[d]))
}

/// Gradient of the penalized objective at a probe, for convergence checks.
#[cfg(test)]
pub(crate) fn logr_gradient(x: &DMatrix<f64>, labels: &[u8], l2: f64, probe: &Probe) -> DVector<f64> {
    let (n, d) = x.shape();
    let mut xa = DMatrix::from_element(n, d + 1, 1.0);
    xa.view_mut((0, 0), (n, d)).copy_from(x);
    let problem = Problem { xa, y: labels, l2, d };
    let mut theta = DVector::zeros(d + 1);
    theta.rows_mut(0, d).copy_from_slice(&probe.w);
    theta[d] = probe.b;
    problem.grad_hess(&theta).0
}
