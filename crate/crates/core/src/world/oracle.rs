use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{pm, SyntheticWorld};
use crate::error::{Error, Result};
use crate::numerics::quadrature::gauss_legendre;
use crate::store::Character;

const NODES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTarget {
    AliceLabel,
    BobLabel,
    Output,
}

/// Sub-population over which the oracle is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSlice {
    pub character: Option<Character>,
    /// Difficulty interval inside `[0, 1]`.
    pub difficulty: (f64, f64),
}

impl Default for OracleSlice {
    fn default() -> Self {
        Self {
            character: None,
            difficulty: (0.0, 1.0),
        }
    }
}

struct State {
    weight: f64,
    target: u8,
    /// Mean score is `slope * g + offset`.
    slope: f64,
    offset: f64,
}

/// Expected AUROC of `<h_layer, v>` at the final prompt token against
/// `target`, over the whole population.
pub fn oracle_auroc(world: &SyntheticWorld, v: &DVector<f64>, layer: usize, target: OracleTarget) -> Result<f64> {
    oracle_auroc_slice(world, v, layer, target, &OracleSlice::default())
}

/// As [`oracle_auroc`], restricted to a character and difficulty interval.
///
/// Exact in the discrete labels; the two difficulty integrals use
/// Gauss-Legendre quadrature.
pub fn oracle_auroc_slice(
    world: &SyntheticWorld,
    v: &DVector<f64>,
    layer: usize,
    target: OracleTarget,
    slice: &OracleSlice,
) -> Result<f64> {
    let cfg = &world.config;
    if layer == 0 || layer > cfg.layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layer_count: cfg.layers,
        });
    }
    if v.len() != cfg.d {
        return Err(Error::Shape(format!("direction has {} entries, world d = {}", v.len(), cfg.d)));
    }
    let (lo, hi) = slice.difficulty;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err(Error::Invalid(format!("difficulty interval ({lo}, {hi}) not inside [0, 1]")));
    }
    let dirs = &world.directions;
    let [k, b_cum, c_cum, o_cum] = cfg.cumulative(layer);
    // Round-off projections of orthogonal directions count as exact zeros.
    let tiny = 1e-12 * v.norm();
    let project = |u: &DVector<f64>| {
        let p = v.dot(u);
        if p.abs() <= tiny {
            0.0
        } else {
            p
        }
    };
    let (pt, pb, pc, po) = (
        project(&dirs.truth),
        project(&dirs.bob),
        project(&dirs.character),
        project(&dirs.out),
    );
    let noise_sd = cfg.noise_sigma * (layer as f64 / cfg.layers as f64).sqrt() * v.norm();

    let p_same = (1.0 + cfg.label_correlation) / 2.0;
    let mut states = Vec::new();
    for a in 0..2u8 {
        for b in 0..2u8 {
            for character in [Character::Alice, Character::Bob] {
                if slice.character.is_some_and(|c| c != character) {
                    continue;
                }
                let weight = if a == b { p_same } else { 1.0 - p_same };
                let c_sign = if character == Character::Bob { 1.0 } else { -1.0 };
                let y = if character == Character::Bob && cfg.bob_active() { b } else { a };
                let t = match target {
                    OracleTarget::AliceLabel => a,
                    OracleTarget::BobLabel => b,
                    OracleTarget::Output => y,
                };
                states.push(State {
                    weight,
                    target: t,
                    slope: k * pt * pm(a),
                    offset: b_cum * pb * pm(b) + c_cum * pc * c_sign + o_cum * po * pm(y),
                });
            }
        }
    }
    let total = |t: u8| states.iter().filter(|s| s.target == t).map(|s| s.weight).sum::<f64>();
    let (w1, w0) = (total(1), total(0));
    if w1 <= 0.0 || w0 <= 0.0 {
        return Err(Error::DegenerateClasses);
    }

    if states.iter().all(|s| s.slope == 0.0 && s.offset == 0.0) {
        return Ok(0.5);
    }
    let width = hi - lo;
    let nodes: Vec<(f64, f64)> = gauss_legendre(NODES, lo, hi)
        .into_iter()
        .map(|(x, w)| (cfg.attenuation(x), w / width))
        .collect();
    let pair_sd = std::f64::consts::SQRT_2 * noise_sd;
    let normal = Normal::standard();
    let compare = |gap: f64| -> f64 {
        if pair_sd > 0.0 {
            normal.cdf(gap / pair_sd)
        } else if gap > 0.0 {
            1.0
        } else if gap < 0.0 {
            0.0
        } else {
            0.5
        }
    };

    let mut acc = 0.0;
    for s1 in states.iter().filter(|s| s.target == 1) {
        for s0 in states.iter().filter(|s| s.target == 0) {
            let mut inner = 0.0;
            for &(g1, q1) in &nodes {
                let m1 = s1.slope * g1 + s1.offset;
                for &(g0, q0) in &nodes {
                    inner += q1 * q0 * compare(m1 - (s0.slope * g0 + s0.offset));
                }
            }
            acc += s1.weight * s0.weight * inner;
        }
    }
    Ok(acc / (w1 * w0))
}
