use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_finite, train_diff_means, train_logr, ContrastBatch, Method, Probe};
use crate::error::{Error, Result};
use crate::numerics::optim::{lbfgs, LbfgsConfig};
use crate::numerics::{sigmoid, top_principal_component, ConceptEraser};

const CCS_MIN_PAIRS: usize = 16;

/// Consistency plus confidence loss of one pair of probabilities.
pub fn ccs_pair_loss(p_pos: f64, p_neg: f64) -> f64 {
    (p_pos - (1.0 - p_neg)).powi(2) + p_pos.min(p_neg).powi(2)
}

/// Fits an eraser of branch identity on the stacked branches and applies it.
fn erase_branches(batch: &ContrastBatch) -> Result<(ConceptEraser, DMatrix<f64>, DMatrix<f64>)> {
    let (n, d) = batch.pos.shape();
    let mut stacked = DMatrix::zeros(2 * n, d);
    stacked.view_mut((0, 0), (n, d)).copy_from(&batch.pos);
    stacked.view_mut((n, 0), (n, d)).copy_from(&batch.neg);
    let concept: Vec<u8> = (0..2 * n).map(|i| u8::from(i < n)).collect();
    let eraser = ConceptEraser::fit(&stacked, &concept)?;
    let pos = eraser.apply(&batch.pos)?;
    let neg = eraser.apply(&batch.neg)?;
    Ok((eraser, pos, neg))
}

/// Result of contrast-consistent search.
#[derive(Debug, Clone)]
pub struct CcsFit {
    /// Sign-unresolved probe scoring `w . (x+ - x-)`.
    pub probe: Probe,
    /// Best final loss over restarts.
    pub loss: f64,
    /// The bias the loss was optimized with (cancels in difference scores).
    pub bias: f64,
    pub restart_losses: Vec<f64>,
}

struct CcsObjective<'a> {
    pos: &'a DMatrix<f64>,
    neg: &'a DMatrix<f64>,
}

impl CcsObjective<'_> {
    fn eval(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let d = self.pos.ncols();
        let n = self.pos.nrows() as f64;
        let w = theta.rows(0, d);
        let b = theta[d];
        let zp = self.pos * w;
        let zn = self.neg * w;
        let mut loss = 0.0;
        let mut gp = DVector::zeros(zp.len());
        let mut gn = DVector::zeros(zn.len());
        for i in 0..zp.len() {
            let pp = sigmoid(zp[i] + b);
            let pn = sigmoid(zn[i] + b);
            loss += ccs_pair_loss(pp, pn);
            let cons = 2.0 * (pp + pn - 1.0);
            let (mut dp, mut dn) = (cons, cons);
            if pp <= pn {
                dp += 2.0 * pp;
            } else {
                dn += 2.0 * pn;
            }
            gp[i] = dp * pp * (1.0 - pp) / n;
            gn[i] = dn * pn * (1.0 - pn) / n;
        }
        let mut grad = DVector::zeros(d + 1);
        grad.rows_mut(0, d)
            .copy_from(&(self.pos.tr_mul(&gp) + self.neg.tr_mul(&gn)));
        grad[d] = gp.sum() + gn.sum();
        (loss / n, grad)
    }
}

/// Contrast-consistent search: unsupervised probe from answer-position pairs.
///
/// Branch identity is erased first. Each of `restarts` runs starts from a
/// seeded unit-norm Gaussian `w` with `b = 0` and is minimized by L-BFGS;
/// the lowest final loss wins.
pub fn train_ccs(batch: &ContrastBatch, restarts: usize, seed: u64) -> Result<CcsFit> {
    let (n, d) = batch.pos.shape();
    if n < CCS_MIN_PAIRS {
        return Err(Error::Shape(format!("CCS needs at least {CCS_MIN_PAIRS} pairs, got {n}")));
    }
    if restarts == 0 {
        return Err(Error::Invalid("CCS needs at least one restart".into()));
    }
    check_finite(&batch.pos)?;
    check_finite(&batch.neg)?;
    let (eraser, pos, neg) = erase_branches(batch)?;

    // Optimize on centered data scaled to unit RMS so unit-norm inits are not saturated.
    let mut center = DVector::zeros(d);
    for row in pos.row_iter().chain(neg.row_iter()) {
        center += row.transpose();
    }
    center /= (2 * n) as f64;
    let mut pos_s = pos;
    let mut neg_s = neg;
    for m in [&mut pos_s, &mut neg_s] {
        for mut row in m.row_iter_mut() {
            row -= center.transpose();
        }
    }
    let rms = ((pos_s.norm_squared() + neg_s.norm_squared()) / (2 * n) as f64).sqrt();
    let scale = if rms > 0.0 { rms } else { 1.0 };
    pos_s /= scale;
    neg_s /= scale;

    let objective = CcsObjective { pos: &pos_s, neg: &neg_s };
    let cfg = LbfgsConfig::default();
    let runs: Vec<(f64, DVector<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut theta = DVector::from_fn(d + 1, |_, _| StandardNormal.sample(&mut rng));
            theta[d] = 0.0;
            let norm = theta.rows(0, d).norm();
            if norm > 0.0 {
                theta.rows_mut(0, d).unscale_mut(norm);
            }
            let m = lbfgs(|t| objective.eval(t), theta, &cfg);
            (m.value, m.x)
        })
        .collect();
    let restart_losses: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.0.is_finite() && r.1.iter().all(|v| v.is_finite()))
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::AllRestartsDiverged(restart_losses.clone()))?;
    let (loss, theta) = &runs[best];
    let w = theta.rows(0, d) / scale;
    let bias = theta[d] - w.dot(&center);
    let mut probe = Probe::new(Method::Ccs, 0, w, 0.0);
    probe.erasure = Some(eraser);
    Ok(CcsFit {
        probe,
        loss: *loss,
        bias,
        restart_losses,
    })
}

/// Contrastive representation clustering: top principal component of the
/// erased pair differences.
pub fn train_crc(batch: &ContrastBatch) -> Result<Probe> {
    if batch.len() < 2 {
        return Err(Error::Shape(format!("CRC needs at least 2 pairs, got {}", batch.len())));
    }
    check_finite(&batch.pos)?;
    check_finite(&batch.neg)?;
    let (eraser, pos, neg) = erase_branches(batch)?;
    let diffs = pos - neg;
    let w = top_principal_component(&diffs)?;
    let scores: Vec<f64> = (&diffs * &w).iter().copied().collect();
    let median = crate::numerics::quantile(&scores, 0.5).unwrap_or(0.0);
    let mut probe = Probe::new(Method::Crc, 0, w, -median);
    probe.erasure = Some(eraser);
    Ok(probe)
}

/// Supervised probe on the concatenated pair `[x+ | x-]`.
pub fn train_contrast_supervised(
    batch: &ContrastBatch,
    labels: &[u8],
    method: Method,
    l2: f64,
) -> Result<Probe> {
    let x = batch.concatenated();
    let mut probe = match method {
        Method::LogrContrast => train_logr(&x, labels, l2)?,
        Method::DiffMeansContrast => train_diff_means(&x, labels)?,
        other => {
            return Err(Error::Invalid(format!("{other} is not a contrast-supervised method")));
        }
    };
    probe.method = method;
    Ok(probe)
}
