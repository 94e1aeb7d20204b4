use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum `|ceil - floor|` for a meaningful PGR.
pub const PGR_EPSILON: f64 = 1e-3;

/// Earliest layer (1-indexed) whose AUROC gap over 0.5 is at least 95% of
/// the largest gap; `floor(L / 2)` when no layer qualifies.
pub fn earliest_informative_layer(auroc_by_layer: &[f64]) -> usize {
    let big_l = auroc_by_layer.len();
    if big_l == 0 {
        return 0;
    }
    let gaps: Vec<f64> = auroc_by_layer.iter().map(|a| a - 0.5).collect();
    let best = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = 0.95 * best;
    let slack = 1e-12 * best.abs();
    gaps.iter()
        .position(|g| *g >= threshold - slack)
        .map(|i| i + 1)
        .unwrap_or((big_l / 2).max(1))
}

/// Proportion of the floor-to-ceiling AUROC gap recovered.
pub fn pgr(auroc: f64, floor: f64, ceil: f64, epsilon: f64) -> Result<f64> {
    let gap = ceil - floor;
    if !(gap.abs() > epsilon) {
        return Err(Error::UninformativeGap(gap));
    }
    Ok((auroc - floor) / gap)
}

/// One cell feeding an aggregate PGR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgrCell {
    pub auroc: f64,
    pub floor: f64,
    pub ceil: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePgr {
    pub auroc: f64,
    pub floor: f64,
    pub ceil: f64,
    pub pgr: f64,
    pub cells: usize,
    pub excluded: usize,
}

/// Averages AUROC, floor and ceiling over the usable cells first, then
/// takes a single ratio. `None` cells (errored upstream) are excluded and
/// counted.
pub fn aggregate_pgr(cells: &[Option<PgrCell>], epsilon: f64) -> Result<AggregatePgr> {
    let usable: Vec<&PgrCell> = cells.iter().flatten().collect();
    if usable.is_empty() {
        return Err(Error::Invalid("no usable cells to aggregate".into()));
    }
    let k = usable.len() as f64;
    let auroc = usable.iter().map(|c| c.auroc).sum::<f64>() / k;
    let floor = usable.iter().map(|c| c.floor).sum::<f64>() / k;
    let ceil = usable.iter().map(|c| c.ceil).sum::<f64>() / k;
    Ok(AggregatePgr {
        auroc,
        floor,
        ceil,
        pgr: pgr(auroc, floor, ceil, epsilon)?,
        cells: usable.len(),
        excluded: cells.len() - usable.len(),
    })
}
