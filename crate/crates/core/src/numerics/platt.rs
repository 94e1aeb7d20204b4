use serde::{Deserialize, Serialize};

use super::auroc::ScoredLabels;
use crate::error::{Error, Result};

/// Bound on the Platt slope so separable data still yields finite parameters.
pub const PLATT_SLOPE_CAP: f64 = 1e4;
const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 500;

/// Calibration map `score -> sigmoid(a * score + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub const IDENTITY: PlattParams = PlattParams { a: 1.0, b: 0.0 };

    pub fn logit(&self, score: f64) -> f64 {
        self.a * score + self.b
    }

    pub fn prob(&self, score: f64) -> f64 {
        sigmoid(self.logit(score))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn mean_loss(scores: &[f64], labels: &[u8], a: f64, b: f64) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let z = a * s + b;
            softplus(z) - f64::from(y) * z
        })
        .sum::<f64>()
        / n
}

fn separable_fit(scores: &[f64], labels: &[u8]) -> Option<PlattParams> {
    let range = |class: u8| {
        scores
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == class)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&s, _)| {
                (lo.min(s), hi.max(s))
            })
    };
    let (pos_lo, pos_hi) = range(1);
    let (neg_lo, neg_hi) = range(0);
    let (a, mid) = if pos_lo > neg_hi {
        (PLATT_SLOPE_CAP, 0.5 * (pos_lo + neg_hi))
    } else if neg_lo > pos_hi {
        (-PLATT_SLOPE_CAP, 0.5 * (neg_lo + pos_hi))
    } else {
        return None;
    };
    Some(PlattParams { a, b: -a * mid })
}

/// Fits Platt scaling by minimizing mean cross-entropy with damped Newton
/// steps. The slope is clipped to `[-PLATT_SLOPE_CAP, PLATT_SLOPE_CAP]`.
pub fn fit_platt(data: ScoredLabels<'_>) -> Result<PlattParams> {
    let (n_pos, n_neg) = data.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateClasses);
    }
    if data.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let (scores, labels) = (data.scores, data.labels);
    let n = scores.len() as f64;

    // Perfect separation has no finite optimum: pin the slope at the cap and
    // put the threshold in the middle of the gap.
    if let Some(params) = separable_fit(scores, labels) {
        return Ok(params);
    }

    let prior = n_pos as f64 / n;
    let mut a = 0.0;
    let mut b = (prior / (1.0 - prior)).ln();
    let mut loss = mean_loss(scores, labels, a, b);

    for _ in 0..MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &y) in scores.iter().zip(labels) {
            let p = sigmoid(a * s + b);
            let r = p - f64::from(y);
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        let (ga, gb) = (ga / n, gb / n);
        let at_cap = a.abs() >= PLATT_SLOPE_CAP && ga * a.signum() < 0.0;
        let ga_eff = if at_cap { 0.0 } else { ga };
        if ga_eff.abs().max(gb.abs()) < GRAD_TOL {
            break;
        }
        let (haa, hab, hbb) = (haa / n + 1e-12, hab / n, hbb / n + 1e-12);

        let (da, db) = if at_cap {
            (0.0, gb / hbb)
        } else {
            let det = haa * hbb - hab * hab;
            if det > 1e-300 {
                ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
            } else {
                (ga, gb)
            }
        };

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let na = (a - step * da).clamp(-PLATT_SLOPE_CAP, PLATT_SLOPE_CAP);
            let nb = b - step * db;
            let nl = mean_loss(scores, labels, na, nb);
            if nl <= loss {
                let stalled = na == a && nb == b;
                a = na;
                b = nb;
                loss = nl;
                accepted = !stalled;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    if !a.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite("platt parameters"));
    }
    Ok(PlattParams { a, b })
}
