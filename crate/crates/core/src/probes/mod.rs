//! Linear probes on one layer's activations.
//!
//! Single-position methods read the final prompt token. Contrast methods
//! read the two answer positions: `logr_contrast` and
//! `diff_means_contrast` concatenate them, while `ccs` and `crc` score the
//! erased difference `w . (x+ - x-)`.

mod contrast;
mod linear;
mod logr;
mod random;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use contrast::{ccs_pair_loss, train_ccs, train_contrast_supervised, train_crc, CcsFit};
pub use linear::{train_diff_means, train_lda};
pub use logr::{train_logr, LOGR_L2};
pub use random::{random_probe_quantiles, RandomBaseline, RANDOM_PERCENTILES};

use crate::error::{Error, Result};
use crate::numerics::{auroc, fit_platt, ConceptEraser, PlattParams, ScoredLabels};
use crate::store::{Position, StoreView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Logr,
    DiffMeans,
    Lda,
    Ccs,
    Crc,
    LogrContrast,
    DiffMeansContrast,
    Random,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Logr,
        Method::DiffMeans,
        Method::Lda,
        Method::Ccs,
        Method::Crc,
        Method::LogrContrast,
        Method::DiffMeansContrast,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Logr => "logr",
            Method::DiffMeans => "diff_means",
            Method::Lda => "lda",
            Method::Ccs => "ccs",
            Method::Crc => "crc",
            Method::LogrContrast => "logr_contrast",
            Method::DiffMeansContrast => "diff_means_contrast",
            Method::Random => "random",
        }
    }

    /// Reads the two answer positions rather than the final prompt token.
    pub fn uses_pairs(self) -> bool {
        matches!(
            self,
            Method::Ccs | Method::Crc | Method::LogrContrast | Method::DiffMeansContrast
        )
    }

    /// Trains without labels (sign still needs resolving).
    pub fn is_unsupervised(self) -> bool {
        matches!(self, Method::Ccs | Method::Crc | Method::Random)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "lr" => "logr",
            "dim" | "diffmeans" => "diff_means",
            "lr_contrast" | "logr_on_contrast" => "logr_contrast",
            "dim_contrast" => "diff_means_contrast",
            other => other,
        };
        Method::ALL
            .into_iter()
            .find(|m| m.name() == alias)
            .ok_or_else(|| Error::Invalid(format!("unknown probing method `{s}`")))
    }
}

/// Aligned answer-position activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastBatch {
    pub pos: DMatrix<f64>,
    pub neg: DMatrix<f64>,
}

impl ContrastBatch {
    pub fn new(pos: DMatrix<f64>, neg: DMatrix<f64>) -> Result<Self> {
        if pos.shape() != neg.shape() {
            return Err(Error::Shape(format!(
                "contrast branches differ: {:?} vs {:?}",
                pos.shape(),
                neg.shape()
            )));
        }
        Ok(Self { pos, neg })
    }

    pub fn len(&self) -> usize {
        self.pos.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.pos.ncols()
    }

    /// `[pos | neg]`, one row per example.
    pub fn concatenated(&self) -> DMatrix<f64> {
        let (n, d) = self.pos.shape();
        let mut out = DMatrix::zeros(n, 2 * d);
        out.view_mut((0, 0), (n, d)).copy_from(&self.pos);
        out.view_mut((0, d), (n, d)).copy_from(&self.neg);
        out
    }

    fn rows(&self, idx: &[usize]) -> Self {
        Self {
            pos: self.pos.select_rows(idx),
            neg: self.neg.select_rows(idx),
        }
    }
}

/// What a probe reads for one set of examples.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Single(DMatrix<f64>),
    Pair(ContrastBatch),
}

impl Inputs {
    /// Loads what `method` needs at `layer` (1-indexed) for the view's rows.
    pub fn from_view(view: &StoreView<'_>, layer: usize, method: Method) -> Result<Self> {
        let layer_count = view.store().layer_count();
        if layer == 0 || layer > layer_count {
            return Err(Error::LayerOutOfRange { layer, layer_count });
        }
        if method.uses_pairs() {
            ContrastBatch::new(
                view.matrix(layer - 1, Position::AnswerPos)?,
                view.matrix(layer - 1, Position::AnswerNeg)?,
            )
            .map(Inputs::Pair)
        } else {
            view.matrix(layer - 1, Position::FinalPrompt).map(Inputs::Single)
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Inputs::Single(x) => x.nrows(),
            Inputs::Pair(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The subset of rows `idx`, in that order.
    pub fn rows(&self, idx: &[usize]) -> Self {
        match self {
            Inputs::Single(x) => Inputs::Single(x.select_rows(idx)),
            Inputs::Pair(b) => Inputs::Pair(b.rows(idx)),
        }
    }

    fn single(&self, method: Method) -> Result<&DMatrix<f64>> {
        match self {
            Inputs::Single(x) => Ok(x),
            Inputs::Pair(_) => Err(Error::Invalid(format!("{method} reads a single position"))),
        }
    }

    fn pair(&self, method: Method) -> Result<&ContrastBatch> {
        match self {
            Inputs::Pair(b) => Ok(b),
            Inputs::Single(_) => Err(Error::Invalid(format!("{method} reads contrast pairs"))),
        }
    }
}

/// How the orientation of a trained probe is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Fit Platt scaling; a negative slope flips the probe.
    #[default]
    Platt,
    /// Flip iff AUROC < 0.5.
    Auroc,
}

impl FromStr for SignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "platt" => Ok(SignMode::Platt),
            "auroc" => Ok(SignMode::Auroc),
            _ => Err(Error::Invalid(format!("unknown sign mode `{s}`"))),
        }
    }
}

/// A trained linear probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub method: Method,
    /// 1-indexed layer the probe was trained on.
    pub layer: usize,
    pub w: Vec<f64>,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platt: Option<PlattParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erasure: Option<ConceptEraser>,
    #[serde(default)]
    pub sign_resolved_on: Option<String>,
}

impl Probe {
    pub(crate) fn new(method: Method, layer: usize, w: DVector<f64>, b: f64) -> Self {
        Self {
            method,
            layer,
            w: w.as_slice().to_vec(),
            b,
            platt: None,
            erasure: None,
            sign_resolved_on: None,
        }
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    /// Width of one input row the probe expects.
    pub fn input_width(&self) -> usize {
        match self.method {
            Method::LogrContrast | Method::DiffMeansContrast => self.w.len() / 2,
            _ => self.w.len(),
        }
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.input_width() {
            return Err(Error::Shape(format!(
                "{} probe expects width {} but input has {cols} columns",
                self.method,
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Uncalibrated scores `w . features + b`.
    pub fn raw_scores(&self, inputs: &Inputs) -> Result<Vec<f64>> {
        let w = self.weights();
        let features = match self.method {
            Method::Ccs | Method::Crc => {
                let batch = inputs.pair(self.method)?;
                self.check_width(batch.dim())?;
                let (pos, neg) = match &self.erasure {
                    Some(e) => (e.apply(&batch.pos)?, e.apply(&batch.neg)?),
                    None => (batch.pos.clone(), batch.neg.clone()),
                };
                pos - neg
            }
            Method::LogrContrast | Method::DiffMeansContrast => {
                let batch = inputs.pair(self.method)?;
                self.check_width(batch.dim())?;
                batch.concatenated()
            }
            _ => {
                let x = inputs.single(self.method)?;
                self.check_width(x.ncols())?;
                x.clone()
            }
        };
        let scores = features * w;
        Ok(scores.iter().map(|s| s + self.b).collect())
    }

    /// Calibrated log-odds when Platt parameters exist, raw scores otherwise.
    pub fn predict_logodds(&self, inputs: &Inputs) -> Result<Vec<f64>> {
        let raw = self.raw_scores(inputs)?;
        Ok(match self.platt {
            Some(p) => raw.into_iter().map(|s| p.logit(s)).collect(),
            None => raw,
        })
    }

    fn negate(&mut self) {
        for w in &mut self.w {
            *w = -*w;
        }
        self.b = -self.b;
    }

    /// Fixes the probe's orientation on a labeled resolution set.
    pub fn resolve_sign(mut self, inputs: &Inputs, labels: &[u8], mode: SignMode, on: &str) -> Result<Self> {
        let raw = self.raw_scores(inputs)?;
        let data = ScoredLabels::new(&raw, labels)?;
        let (pos, neg) = data.class_counts();
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateClasses);
        }
        match mode {
            SignMode::Platt => {
                let p = fit_platt(data)?;
                if p.a < 0.0 {
                    self.negate();
                }
                self.platt = Some(PlattParams { a: p.a.abs(), b: p.b });
            }
            SignMode::Auroc => {
                if auroc(&raw, labels)? < 0.5 {
                    self.negate();
                }
                self.platt = None;
            }
        }
        self.sign_resolved_on = Some(on.to_string());
        Ok(self)
    }
}

/// Training options shared across methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2: f64,
    pub ccs_restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: LOGR_L2,
            ccs_restarts: 10,
            seed: 0,
        }
    }
}

/// Trains `method` at `layer`; the result still needs sign resolution.
///
/// Unsupervised methods ignore `labels`.
pub fn train_probe(
    method: Method,
    inputs: &Inputs,
    labels: &[u8],
    layer: usize,
    cfg: &TrainConfig,
) -> Result<Probe> {
    let mut probe = match method {
        Method::Logr => train_logr(inputs.single(method)?, labels, cfg.l2)?,
        Method::DiffMeans => train_diff_means(inputs.single(method)?, labels)?,
        Method::Lda => train_lda(inputs.single(method)?, labels)?,
        Method::Ccs => train_ccs(inputs.pair(method)?, cfg.ccs_restarts, cfg.seed)?.probe,
        Method::Crc => train_crc(inputs.pair(method)?)?,
        Method::LogrContrast | Method::DiffMeansContrast => {
            train_contrast_supervised(inputs.pair(method)?, labels, method, cfg.l2)?
        }
        Method::Random => {
            let x = inputs.single(method)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let w: DVector<f64> = DVector::from_fn(x.ncols(), |_, _| StandardNormal.sample(&mut rng));
            let norm = w.norm();
            if norm == 0.0 {
                return Err(Error::DegenerateDirection);
            }
            Probe::new(Method::Random, 0, w / norm, 0.0)
        }
    };
    probe.layer = layer;
    Ok(probe)
}

pub(crate) fn check_labels(x_rows: usize, labels: &[u8]) -> Result<(usize, usize)> {
    let scores = vec![0.0; labels.len()];
    if labels.len() != x_rows {
        return Err(Error::Shape(format!("{x_rows} rows but {} labels", labels.len())));
    }
    let counts = ScoredLabels::new(&scores, labels)?.class_counts();
    if counts.0 == 0 || counts.1 == 0 {
        return Err(Error::DegenerateClasses);
    }
    Ok(counts)
}

pub(crate) fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("activations"))
    }
}

/// Class means `(mu1, mu0)` of the rows of `x`.
pub(crate) fn class_means(x: &DMatrix<f64>, labels: &[u8]) -> (DVector<f64>, DVector<f64>) {
    let d = x.ncols();
    let (mut m1, mut m0) = (DVector::zeros(d), DVector::zeros(d));
    let (mut n1, mut n0) = (0usize, 0usize);
    for (row, &y) in x.row_iter().zip(labels) {
        if y == 1 {
            m1 += row.transpose();
            n1 += 1;
        } else {
            m0 += row.transpose();
            n0 += 1;
        }
    }
    (m1 / n1.max(1) as f64, m0 / n0.max(1) as f64)
}

#[cfg(test)]
mod tests;
