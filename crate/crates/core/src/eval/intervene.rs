use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MAX_TRAIN;
use crate::error::{Error, Result};
use crate::numerics::{auroc, column_means};
use crate::probes::{train_probe, Inputs, Method, TrainConfig};
use crate::store::{Character, Filter, LabelSet, Split};
use crate::world::SyntheticWorld;

/// Default number of evaluated examples per intervention.
pub const INTERVENTION_EXAMPLES: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    /// Examples generated from the world.
    pub world_n: usize,
    pub n_eval: usize,
    pub max_train: usize,
    pub seed: u64,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            world_n: 4000,
            n_eval: INTERVENTION_EXAMPLES,
            max_train: MAX_TRAIN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub method: Method,
    pub layer: usize,
    pub n: usize,
    /// Fraction of hard output decisions (`p > 0.5`) that change.
    pub flip_rate: f64,
    /// Output AUROC against Bob's labels before and after the reflection.
    pub auroc_before: Option<f64>,
    pub auroc_after: Option<f64>,
}

/// Reflects Bob-context states at `layer` about the hyperplane normal to a
/// probe direction (trained on Alice's contexts, centered on the training
/// mean) and replays the rest of the forward pass.
///
/// `Method::Random` uses a seeded random unit direction with the same center.
pub fn run_intervention(
    world: &SyntheticWorld,
    method: Method,
    layer: usize,
    cfg: &InterventionConfig,
) -> Result<InterventionReport> {
    if method.uses_pairs() {
        return Err(Error::Invalid(format!(
            "{method} reads answer positions; interventions act on the final prompt state"
        )));
    }
    let data = world.generate(cfg.world_n)?;
    let store = &data.store;
    let train = store.select(
        &Filter::slice("A")?
            .with_splits(&[Split::Train])
            .with_max_n(cfg.max_train, cfg.seed),
    )?;
    let inputs = Inputs::from_view(&train, layer, method)?;
    let Inputs::Single(x) = &inputs else {
        unreachable!("single-position method")
    };
    let center = column_means(x);
    let w = if method == Method::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        DVector::from_fn(x.ncols(), |_, _| StandardNormal.sample(&mut rng))
    } else {
        let tc = TrainConfig {
            seed: cfg.seed,
            ..TrainConfig::default()
        };
        train_probe(method, &inputs, &train.labels(LabelSet::Alice), layer, &tc)?.weights()
    };
    let norm = w.norm();
    if !(norm > 0.0) {
        return Err(Error::DegenerateDirection);
    }
    let w = w / norm;

    let eval = store.select(
        &Filter::default()
            .with_characters(&[Character::Bob])
            .with_splits(&[Split::Test])
            .with_max_n(cfg.n_eval, cfg.seed),
    )?;
    let labels = eval.labels(LabelSet::Bob);
    let mut before = Vec::with_capacity(eval.len());
    let mut after = Vec::with_capacity(eval.len());
    for &row in eval.rows() {
        let ex = world.example(row);
        before.push(data.lm_output_prob[row]);
        after.push(world.intervene_forward(&ex, layer, &w, &center)?);
    }
    let flips = before
        .iter()
        .zip(&after)
        .filter(|(p, q)| (**p > 0.5) != (**q > 0.5))
        .count();
    let two_class = labels.contains(&0) && labels.contains(&1);
    Ok(InterventionReport {
        method,
        layer,
        n: eval.len(),
        flip_rate: flips as f64 / eval.len() as f64,
        auroc_before: two_class.then(|| auroc(&before, &labels)).transpose()?,
        auroc_after: two_class.then(|| auroc(&after, &labels)).transpose()?,
    })
}
