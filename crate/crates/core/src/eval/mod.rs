//! Transfer experiments, layer selection and PGR.
//!
//! Layers are 1-indexed throughout this module.

mod intervene;
mod metrics;
mod report;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use intervene::{run_intervention, InterventionConfig, InterventionReport, INTERVENTION_EXAMPLES};
pub use metrics::{aggregate_pgr, earliest_informative_layer, pgr, AggregatePgr, PgrCell, PGR_EPSILON};
pub use report::{
    cells_table, emit_report, pgr_table, pgr_tables, report_markdown, summary_table, ReportFormat, ReportTable,
};

use crate::error::{Error, Result};
use crate::numerics::auroc;
use crate::probes::{train_logr, train_probe, Inputs, Method, SignMode, TrainConfig};
use crate::store::{ActivationStore, Character, Filter, LabelSet, Position, Split, StoreView};

pub const MAX_TRAIN: usize = 4000;
pub const MAX_EVAL: usize = 1000;
/// Fraction of the training selection held out for in-distribution AUROC.
pub const HELD_OUT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    #[serde(rename = "A-B")]
    AToB,
    #[serde(rename = "B-A")]
    BToA,
    #[serde(rename = "AE-AH")]
    AeToAh,
    #[serde(rename = "AE-BH")]
    AeToBh,
    #[serde(rename = "all-BH")]
    AllToBh,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::AToB,
        Experiment::BToA,
        Experiment::AeToAh,
        Experiment::AeToBh,
        Experiment::AllToBh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AToB => "A-B",
            Experiment::BToA => "B-A",
            Experiment::AeToAh => "AE-AH",
            Experiment::AeToBh => "AE-BH",
            Experiment::AllToBh => "all-BH",
        }
    }

    /// The standard train/eval slices: train split for training, test
    /// split for evaluation, Alice's labels for evaluation.
    pub fn spec(self) -> TransferSpec {
        let (train, eval) = match self {
            Experiment::AToB => ("A", "B"),
            Experiment::BToA => ("B", "A"),
            Experiment::AeToAh => ("AE", "AH"),
            Experiment::AeToBh => ("AE", "BH"),
            Experiment::AllToBh => ("all", "BH"),
        };
        let slice = |name: &str, split: Split| {
            Filter::slice(name)
                .expect("built-in slice names parse")
                .with_splits(&[split])
        };
        TransferSpec {
            name: self.name().to_string(),
            train_filter: slice(train, Split::Train),
            eval_filter: slice(eval, Split::Test),
            train_labels: if self == Experiment::BToA {
                LabelSet::Bob
            } else {
                LabelSet::Alice
            },
            eval_labels: LabelSet::Alice,
            max_train: MAX_TRAIN,
            max_eval: MAX_EVAL,
            disagreement_only: matches!(self, Experiment::AToB | Experiment::BToA),
            unsupervised_only: self == Experiment::AllToBh,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace("->", "-").replace('→', "-").to_ascii_lowercase();
        Experiment::ALL
            .into_iter()
            .find(|e| e.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Invalid(format!("unknown experiment `{s}`")))
    }
}

/// One train-slice to eval-slice transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub name: String,
    pub train_filter: Filter,
    pub eval_filter: Filter,
    pub train_labels: LabelSet,
    pub eval_labels: LabelSet,
    pub max_train: usize,
    pub max_eval: usize,
    /// Evaluate only where Alice and Bob disagree.
    pub disagreement_only: bool,
    /// Only unsupervised methods; signs are resolved with Alice's labels.
    pub unsupervised_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub seed: u64,
    pub sign_mode: SignMode,
    pub train: TrainConfig,
    /// Restrict to these layers (1-indexed); all layers when `None`.
    pub layers: Option<Vec<usize>>,
    pub pgr_epsilon: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sign_mode: SignMode::Platt,
            train: TrainConfig::default(),
            layers: None,
            pgr_epsilon: PGR_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub layer: usize,
    pub auroc_id: Option<f64>,
    pub auroc_transfer: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub eil_layer: Option<usize>,
    pub auroc_id_at_eil: Option<f64>,
    pub auroc_transfer_at_eil: Option<f64>,
    pub auroc_transfer_final: Option<f64>,
    pub pgr: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub experiment: String,
    pub dataset: String,
    pub seed: u64,
    pub layer_count: usize,
    pub n_train: usize,
    pub n_heldout: usize,
    pub n_eval: usize,
    pub floor_auroc: Option<f64>,
    pub ceil_auroc: Option<f64>,
    pub floor_ceil_note: Option<String>,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<MethodSummary>,
}

impl TransferReport {
    pub fn cell(&self, method: Method, layer: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.method == method && c.layer == layer)
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// AUROC and floor/ceiling for one method at its EIL.
    pub fn pgr_cell(&self, method: Method) -> Option<PgrCell> {
        let s = self.summary(method)?;
        Some(PgrCell {
            auroc: s.auroc_transfer_at_eil?,
            floor: self.floor_auroc?,
            ceil: self.ceil_auroc?,
        })
    }
}

/// Short description of a filter, e.g. `AE/train`.
pub fn describe_filter(filter: &Filter) -> String {
    let chars = match filter.characters.as_deref() {
        Some([Character::Alice]) => "A",
        Some([Character::Bob]) => "B",
        _ => "",
    };
    let quart = match filter.quartiles.as_deref() {
        Some([crate::store::Quartile::Easy]) => "E",
        Some([crate::store::Quartile::Hard]) => "H",
        Some([crate::store::Quartile::Mid]) => "M",
        _ => "",
    };
    let mut name = format!("{chars}{quart}");
    if name.is_empty() {
        name = "all".into();
    }
    if let Some(splits) = &filter.splits {
        let s: Vec<&str> = splits
            .iter()
            .map(|s| match s {
                Split::Train => "train",
                Split::Validation => "validation",
                Split::Test => "test",
            })
            .collect();
        name = format!("{name}/{}", s.join("+"));
    }
    name
}

fn same_rows(a: &Filter, b: &Filter) -> bool {
    a.characters == b.characters && a.quartiles == b.quartiles && a.splits == b.splits
}

/// Splits `0..n` into (fit, held-out) by a seeded shuffle; the held-out part
/// is the last 20% of the shuffled order. Both parts come back sorted.
pub fn held_out_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = if n < 2 {
        0
    } else {
        ((n as f64 * HELD_OUT_FRACTION).round() as usize).clamp(1, n - 1)
    };
    let mut fit = order[..n - n_hold].to_vec();
    let mut hold = order[n - n_hold..].to_vec();
    fit.sort_unstable();
    hold.sort_unstable();
    (fit, hold)
}

fn cell_seed(seed: u64, method: Method, layer: usize) -> u64 {
    let m = Method::ALL.iter().position(|x| *x == method).unwrap_or(0) as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((layer as u64) << 8)
        .wrapping_add(m)
}

fn select_eval<'a>(store: &'a ActivationStore, filter: &Filter, spec: &TransferSpec, seed: u64) -> Result<StoreView<'a>> {
    let view = store.select(&filter.clone().with_max_n(spec.max_eval, seed))?;
    if spec.disagreement_only {
        let v = view.retain(|m| m.alice_label != m.bob_label);
        if v.is_empty() {
            return Err(Error::EmptyDisagreement);
        }
        return Ok(v);
    }
    Ok(view)
}

fn two_classes(labels: &[u8]) -> bool {
    labels.contains(&0) && labels.contains(&1)
}

/// Final-layer LogR trained on `train` and scored on `eval`.
fn final_layer_logr(
    train: &StoreView<'_>,
    train_labels: LabelSet,
    eval: &StoreView<'_>,
    eval_labels: LabelSet,
    cfg: &TransferConfig,
) -> Result<f64> {
    let last = train.store().layer_count() - 1;
    let x = train.matrix(last, Position::FinalPrompt)?;
    let y = train.labels(train_labels);
    let probe = train_logr(&x, &y, cfg.train.l2)?;
    let probe = probe.resolve_sign(&Inputs::Single(x), &y, cfg.sign_mode, "final")?;
    let ex = Inputs::Single(eval.matrix(last, Position::FinalPrompt)?);
    auroc(&probe.raw_scores(&ex)?, &eval.labels(eval_labels))
}

/// Floor (Bob's labels, Bob's contexts) and ceiling (Alice's labels,
/// Alice's contexts) probes, both scored against the eval labels.
fn floor_ceiling(
    store: &ActivationStore,
    spec: &TransferSpec,
    eval: &StoreView<'_>,
    cfg: &TransferConfig,
) -> Result<(f64, f64)> {
    let train_split = spec.train_filter.splits.clone();
    let mut floor_filter = Filter::slice("B")?.with_max_n(spec.max_train, cfg.seed);
    floor_filter.splits = train_split.clone();
    let mut ceil_filter = Filter::slice("A")?.with_max_n(spec.max_train, cfg.seed);
    ceil_filter.splits = train_split;
    let floor_train = store.select(&floor_filter)?;
    let ceil_train = store.select(&ceil_filter)?;

    let alice_eval_filter = spec.eval_filter.clone().with_characters(&[Character::Alice]);
    let ceil_eval = select_eval(store, &alice_eval_filter, spec, cfg.seed)?;

    let floor = final_layer_logr(&floor_train, LabelSet::Bob, eval, spec.eval_labels, cfg)?;
    let ceil = final_layer_logr(&ceil_train, LabelSet::Alice, &ceil_eval, spec.eval_labels, cfg)?;
    Ok((floor, ceil))
}

/// Trains every method at every layer on the train slice and scores it on
/// the held-out part of the train slice and on the eval slice.
pub fn run_transfer(
    store: &ActivationStore,
    spec: &TransferSpec,
    methods: &[Method],
    cfg: &TransferConfig,
) -> Result<TransferReport> {
    let big_l = store.layer_count();
    let layers: Vec<usize> = match &cfg.layers {
        Some(ls) => {
            if let Some(&bad) = ls.iter().find(|&&l| l == 0 || l > big_l) {
                return Err(Error::LayerOutOfRange { layer: bad, layer_count: big_l });
            }
            ls.clone()
        }
        None => (1..=big_l).collect(),
    };
    let train_view = store.select(&spec.train_filter.clone().with_max_n(spec.max_train, cfg.seed))?;
    if train_view.len() < 3 {
        return Err(Error::Invalid(format!("training slice has only {} rows", train_view.len())));
    }
    let (fit_idx, hold_idx) = held_out_split(train_view.len(), cfg.seed);
    let fit_view = train_view.subset(&fit_idx);
    let hold_view = train_view.subset(&hold_idx);

    let self_transfer = same_rows(&spec.train_filter, &spec.eval_filter)
        && spec.train_labels == spec.eval_labels
        && !spec.disagreement_only;
    let eval_view = if self_transfer {
        hold_view.clone()
    } else {
        select_eval(store, &spec.eval_filter, spec, cfg.seed)?
    };

    // Unsupervised-only experiments resolve signs with Alice's labels.
    let sign_labels = if spec.unsupervised_only { LabelSet::Alice } else { spec.train_labels };
    let fit_labels = fit_view.labels(sign_labels);
    let hold_labels = hold_view.labels(sign_labels);
    let eval_labels = eval_view.labels(spec.eval_labels);
    let eval_ok = two_classes(&eval_labels);
    let hold_ok = two_classes(&hold_labels);
    let source = describe_filter(&spec.train_filter);

    let active: Vec<Method> = methods
        .iter()
        .copied()
        .filter(|m| {
            let keep = !spec.unsupervised_only || m.is_unsupervised();
            if !keep {
                log::warn!("{}: skipping supervised method {m}", spec.name);
            }
            keep
        })
        .collect();

    let per_layer: Vec<Vec<CellResult>> = layers
        .par_iter()
        .map(|&layer| {
            let mut cache: [Option<Result<(Inputs, Inputs, Inputs)>>; 2] = [None, None];
            let mut out = Vec::with_capacity(active.len());
            for &method in &active {
                let slot = usize::from(method.uses_pairs());
                let loaded = cache[slot].get_or_insert_with(|| {
                    Ok((
                        Inputs::from_view(&fit_view, layer, method)?,
                        Inputs::from_view(&hold_view, layer, method)?,
                        Inputs::from_view(&eval_view, layer, method)?,
                    ))
                });
                let cell = match loaded {
                    Err(e) => CellResult {
                        method,
                        layer,
                        auroc_id: None,
                        auroc_transfer: None,
                        error: Some(e.to_string()),
                    },
                    Ok((fit_in, hold_in, eval_in)) => {
                        let train_cfg = TrainConfig {
                            seed: cell_seed(cfg.seed, method, layer),
                            ..cfg.train
                        };
                        let trained = train_probe(method, fit_in, &fit_labels, layer, &train_cfg)
                            .and_then(|p| p.resolve_sign(fit_in, &fit_labels, cfg.sign_mode, &source));
                        match trained {
                            Err(e) => CellResult {
                                method,
                                layer,
                                auroc_id: None,
                                auroc_transfer: None,
                                error: Some(e.to_string()),
                            },
                            Ok(probe) => {
                                let score = |inputs: &Inputs, labels: &[u8], ok: bool| -> Result<Option<f64>> {
                                    if !ok {
                                        return Ok(None);
                                    }
                                    auroc(&probe.raw_scores(inputs)?, labels).map(Some)
                                };
                                let id = score(hold_in, &hold_labels, hold_ok);
                                let tr = score(eval_in, &eval_labels, eval_ok);
                                let error = match (&id, &tr) {
                                    (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
                                    _ if !eval_ok => Some("single-class eval labels".into()),
                                    _ if !hold_ok => Some("single-class held-out labels".into()),
                                    _ => None,
                                };
                                CellResult {
                                    method,
                                    layer,
                                    auroc_id: id.ok().flatten(),
                                    auroc_transfer: tr.ok().flatten(),
                                    error,
                                }
                            }
                        }
                    }
                };
                out.push(cell);
            }
            out
        })
        .collect();
    let mut cells: Vec<CellResult> = per_layer.into_iter().flatten().collect();
    cells.sort_by_key(|c| (c.method, c.layer));

    let (floor_auroc, ceil_auroc, floor_ceil_note) = if !eval_ok {
        (None, None, Some("single-class eval labels".to_string()))
    } else {
        match floor_ceiling(store, spec, &eval_view, cfg) {
            Ok((f, c)) => (Some(f), Some(c), None),
            Err(e) => (None, None, Some(e.to_string())),
        }
    };

    let summaries = active
        .iter()
        .map(|&method| summarize(method, &cells, &layers, floor_auroc, ceil_auroc, cfg.pgr_epsilon))
        .collect();

    Ok(TransferReport {
        experiment: spec.name.clone(),
        dataset: store.manifest().dataset_name.clone(),
        seed: cfg.seed,
        layer_count: big_l,
        n_train: fit_view.len(),
        n_heldout: hold_view.len(),
        n_eval: eval_view.len(),
        floor_auroc,
        ceil_auroc,
        floor_ceil_note,
        cells,
        summaries,
    })
}

fn summarize(
    method: Method,
    cells: &[CellResult],
    layers: &[usize],
    floor: Option<f64>,
    ceil: Option<f64>,
    epsilon: f64,
) -> MethodSummary {
    let mine: Vec<&CellResult> = cells.iter().filter(|c| c.method == method).collect();
    let id: Vec<Option<f64>> = layers
        .iter()
        .map(|&l| mine.iter().find(|c| c.layer == l).and_then(|c| c.auroc_id))
        .collect();
    let final_layer = layers.iter().copied().max();
    let auroc_transfer_final = final_layer
        .and_then(|l| mine.iter().find(|c| c.layer == l))
        .and_then(|c| c.auroc_transfer);
    let mut summary = MethodSummary {
        method,
        eil_layer: None,
        auroc_id_at_eil: None,
        auroc_transfer_at_eil: None,
        auroc_transfer_final,
        pgr: None,
        note: None,
    };
    if id.iter().any(Option::is_none) {
        summary.note = Some("missing in-distribution AUROC for some layers".into());
        return summary;
    }
    let profile: Vec<f64> = id.into_iter().flatten().collect();
    let pos = earliest_informative_layer(&profile);
    if pos == 0 {
        return summary;
    }
    let layer = layers[pos - 1];
    let cell = mine.iter().find(|c| c.layer == layer);
    summary.eil_layer = Some(layer);
    summary.auroc_id_at_eil = cell.and_then(|c| c.auroc_id);
    summary.auroc_transfer_at_eil = cell.and_then(|c| c.auroc_transfer);
    match (summary.auroc_transfer_at_eil, floor, ceil) {
        (Some(a), Some(f), Some(c)) => match pgr(a, f, c, epsilon) {
            Ok(v) => summary.pgr = Some(v),
            Err(e) => summary.note = Some(e.to_string()),
        },
        _ => summary.note = Some("PGR unavailable: missing AUROC, floor or ceiling".into()),
    }
    summary
}

#[cfg(test)]
mod tests;
