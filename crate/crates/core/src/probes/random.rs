use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::check_labels;
use crate::error::{Error, Result};
use crate::numerics::{auroc, quantiles};

pub const RANDOM_PERCENTILES: [f64; 7] = [1.0, 5.0, 25.0, 50.0, 75.0, 95.0, 99.0];
const CHUNK: usize = 256;

/// Percentiles of target AUROC over random sign-resolved directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub draws: usize,
    /// `(percentile, target AUROC)` pairs.
    pub percentiles: Vec<(f64, f64)>,
}

/// Draws directions uniformly on the sphere, orients each on the source set
/// by AUROC, and records its target AUROC.
pub fn random_probe_quantiles(
    x_src: &DMatrix<f64>,
    labels_src: &[u8],
    x_tgt: &DMatrix<f64>,
    labels_tgt: &[u8],
    draws: usize,
    seed: u64,
) -> Result<RandomBaseline> {
    check_labels(x_src.nrows(), labels_src)?;
    check_labels(x_tgt.nrows(), labels_tgt)?;
    let d = x_src.ncols();
    if x_tgt.ncols() != d {
        return Err(Error::Shape(format!("source width {d} but target width {}", x_tgt.ncols())));
    }
    if draws == 0 || d == 0 {
        return Err(Error::Invalid("random baseline needs draws >= 1 and d >= 1".into()));
    }
    let chunks = draws.div_ceil(CHUNK);
    let per_chunk: Result<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let k = CHUNK.min(draws - c * CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut w = DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng));
            for mut col in w.column_iter_mut() {
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                }
            }
            let src = x_src * &w;
            let tgt = x_tgt * &w;
            let mut out = Vec::with_capacity(k);
            for j in 0..k {
                let s: Vec<f64> = src.column(j).iter().copied().collect();
                let t: Vec<f64> = tgt.column(j).iter().copied().collect();
                let flip = auroc(&s, labels_src)? < 0.5;
                let a = auroc(&t, labels_tgt)?;
                out.push(if flip { 1.0 - a } else { a });
            }
            Ok(out)
        })
        .collect();
    let values: Vec<f64> = per_chunk?.into_iter().flatten().collect();
    let qs: Vec<f64> = RANDOM_PERCENTILES.iter().map(|p| p / 100.0).collect();
    let table = quantiles(&values, &qs).unwrap_or_default();
    Ok(RandomBaseline {
        draws,
        percentiles: RANDOM_PERCENTILES.iter().copied().zip(table).collect(),
    })
}
