use crate::error::{Error, Result};

/// Scores paired with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Invalid(format!("label {bad} is not binary")));
        }
        Ok(Self { scores, labels })
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }
}

/// Area under the ROC curve, computed as the Mann-Whitney U statistic over
/// `n_pos * n_neg`. Tied pairs count one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let data = ScoredLabels::new(scores, labels)?;
    let (n_pos, n_neg) = data.class_counts();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateClasses);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average ranks over tie groups; ranks are half-integers so the sum is exact.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }

    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// AUROC from separate positive and negative score sets.
pub fn auroc_split(positive: &[f64], negative: &[f64]) -> Result<f64> {
    let mut scores = Vec::with_capacity(positive.len() + negative.len());
    scores.extend_from_slice(positive);
    scores.extend_from_slice(negative);
    let mut labels = vec![1u8; positive.len()];
    labels.resize(scores.len(), 0);
    auroc(&scores, &labels)
}
