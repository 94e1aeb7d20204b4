//! Mahalanobis anomaly detection over per-layer probe log-odds.
//!
//! The reference distribution is Alice's easy examples: probes are trained
//! on the AE train split, Platt-calibrated on the AE validation split, and
//! a Gaussian is fit to the validation log-odds vectors. Detection is
//! scored as Bob-hard (positive) against Alice-hard on the test split.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{describe_filter, MAX_TRAIN};
use crate::numerics::{auroc_split, CovarianceVariant, GaussianFit, MahalanobisScorer};
use crate::probes::{train_probe, Inputs, Method, Probe, SignMode, TrainConfig};
use crate::store::{ActivationStore, Character, Filter, LabelSet, Quartile, Split, StoreView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyConfig {
    pub max_train: usize,
    pub train: TrainConfig,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        Self {
            max_train: MAX_TRAIN,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyDetector {
    pub method: Method,
    pub variant: CovarianceVariant,
    /// One calibrated probe per layer, in layer order.
    pub probes: Vec<Probe>,
    pub fit: GaussianFit,
    /// Rows the probes were trained on.
    pub probe_filter: String,
    /// Rows the Platt calibration and the Gaussian were fit on.
    pub reference_filter: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub example_id: String,
    pub character: Character,
    pub difficulty_quartile: Quartile,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEval {
    pub method: Method,
    pub variant: CovarianceVariant,
    pub auroc: f64,
    pub n_bob_hard: usize,
    pub n_alice_hard: usize,
}

fn ae(split: Split) -> Filter {
    Filter::slice("AE").expect("AE parses").with_splits(&[split])
}

/// Fits a detector with default settings.
pub fn fit_detector(
    store: &ActivationStore,
    method: Method,
    variant: CovarianceVariant,
    seed: u64,
) -> Result<AnomalyDetector> {
    fit_detector_with(store, method, variant, seed, &AnomalyConfig::default())
}

pub fn fit_detector_with(
    store: &ActivationStore,
    method: Method,
    variant: CovarianceVariant,
    seed: u64,
    cfg: &AnomalyConfig,
) -> Result<AnomalyDetector> {
    let train_filter = ae(Split::Train).with_max_n(cfg.max_train, seed);
    let ref_filter = ae(Split::Validation);
    let train = store.select(&train_filter)?;
    let reference = store.select(&ref_filter)?;
    let y_train = train.labels(LabelSet::Alice);
    let y_ref = reference.labels(LabelSet::Alice);
    let probe_desc = describe_filter(&train_filter);
    let ref_desc = describe_filter(&ref_filter);

    let probes: Result<Vec<Probe>> = (1..=store.layer_count())
        .into_par_iter()
        .map(|layer| {
            let tc = TrainConfig {
                seed: seed.wrapping_add(layer as u64),
                ..cfg.train
            };
            let x = Inputs::from_view(&train, layer, method)?;
            let x_ref = Inputs::from_view(&reference, layer, method)?;
            let probe = train_probe(method, &x, &y_train, layer, &tc)?;
            let probe = probe.resolve_sign(&x, &y_train, SignMode::Auroc, &probe_desc)?;
            probe.resolve_sign(&x_ref, &y_ref, SignMode::Platt, &ref_desc)
        })
        .collect();
    let probes = probes?;
    let features = features_of(&probes, &reference)?;
    let fit = GaussianFit::fit(&features)?;
    // Fail early on a covariance no variant can use.
    MahalanobisScorer::new(&fit, variant)?;
    Ok(AnomalyDetector {
        method,
        variant,
        probes,
        fit,
        probe_filter: probe_desc,
        reference_filter: ref_desc,
        seed,
    })
}

/// `n x L` matrix of per-layer calibrated log-odds.
fn features_of(probes: &[Probe], view: &StoreView<'_>) -> Result<DMatrix<f64>> {
    let layer_count = view.store().layer_count();
    if probes.len() != layer_count {
        return Err(Error::Shape(format!(
            "detector has {} layers but store has {layer_count}",
            probes.len()
        )));
    }
    let cols: Result<Vec<Vec<f64>>> = probes
        .par_iter()
        .map(|p| p.predict_logodds(&Inputs::from_view(view, p.layer, p.method)?))
        .collect();
    let cols = cols?;
    Ok(DMatrix::from_fn(view.len(), probes.len(), |i, j| cols[j][i]))
}

impl AnomalyDetector {
    pub fn layer_count(&self) -> usize {
        self.probes.len()
    }

    pub fn features(&self, view: &StoreView<'_>) -> Result<DMatrix<f64>> {
        features_of(&self.probes, view)
    }

    /// Mahalanobis distance of each feature row from the reference Gaussian.
    pub fn score_features(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let scorer = MahalanobisScorer::new(&self.fit, self.variant)?;
        features
            .row_iter()
            .map(|r| scorer.distance(&DVector::from_iterator(r.len(), r.iter().copied())))
            .collect()
    }

    pub fn score(&self, store: &ActivationStore, filter: &Filter) -> Result<Vec<AnomalyScore>> {
        let view = store.select(filter)?;
        let scores = self.score_features(&self.features(&view)?)?;
        Ok(view
            .metas()
            .zip(scores)
            .map(|(m, score)| AnomalyScore {
                example_id: m.example_id.clone(),
                character: m.character,
                difficulty_quartile: m.difficulty_quartile,
                score,
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let det: Self = serde_json::from_str(&text)?;
        if det.fit.dim() != det.probes.len() {
            return Err(Error::Shape(format!(
                "detector has {} probes but a {}-dimensional Gaussian",
                det.probes.len(),
                det.fit.dim()
            )));
        }
        Ok(det)
    }
}

/// AUROC of Bob-hard (positive) against Alice-hard, both on the test split.
pub fn eval_anomaly(detector: &AnomalyDetector, store: &ActivationStore) -> Result<AnomalyEval> {
    let slice = |name: &str| Filter::slice(name).expect("slice parses").with_splits(&[Split::Test]);
    let bh = detector.score(store, &slice("BH"))?;
    let ah = detector.score(store, &slice("AH"))?;
    let pos: Vec<f64> = bh.iter().map(|s| s.score).collect();
    let neg: Vec<f64> = ah.iter().map(|s| s.score).collect();
    Ok(AnomalyEval {
        method: detector.method,
        variant: detector.variant,
        auroc: auroc_split(&pos, &neg)?,
        n_bob_hard: pos.len(),
        n_alice_hard: neg.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{gen_world, WorldConfig};

    fn world(layers: usize, seed: u64, tweak: impl FnOnce(&mut WorldConfig)) -> ActivationStore {
        let mut cfg = WorldConfig {
            d: 16,
            layers,
            ..WorldConfig::default()
        };
        tweak(&mut cfg);
        gen_world(&cfg, 3000, seed).unwrap().store
    }

    fn rebuild(store: &ActivationStore, edit: impl Fn(usize, &mut [f32], &crate::store::ExampleMeta), metas: Vec<crate::store::ExampleMeta>) -> ActivationStore {
        let d = store.dim();
        let slabs = crate::store::Position::ALL
            .iter()
            .map(|&pos| {
                (0..store.layer_count())
                    .map(|l| {
                        let mut slab = store.slab(l, pos).unwrap().to_vec();
                        for (i, m) in store.metas().iter().enumerate() {
                            edit(l, &mut slab[i * d..(i + 1) * d], m);
                        }
                        slab
                    })
                    .collect()
            })
            .collect();
        ActivationStore::new(store.manifest().clone(), slabs, metas).unwrap()
    }

    #[test]
    fn fit_smoke_and_bookkeeping() {
        let store = world(6, 1, |_| {});
        let det = fit_detector(&store, Method::Logr, CovarianceVariant::Full, 0).unwrap();
        assert_eq!(det.layer_count(), 6);
        assert_eq!(det.fit.dim(), 6);
        assert!(det.fit.mean.iter().all(|v| v.is_finite()));
        assert_eq!(det.probe_filter, "AE/train");
        assert_eq!(det.reference_filter, "AE/validation");
        assert!(det.probes.iter().all(|p| p.method == Method::Logr && p.platt.is_some()));
        let e = eval_anomaly(&det, &store).unwrap();
        assert!(e.n_bob_hard > 0 && e.n_alice_hard > 0);
        assert!((0.0..=1.0).contains(&e.auroc));
    }

    #[test]
    fn never_reads_bob_or_hard_rows() {
        let store = world(4, 2, |_| {});
        let det = fit_detector(&store, Method::DiffMeans, CovarianceVariant::Full, 0).unwrap();
        let scrambled = rebuild(
            &store,
            |l, row, m| {
                if m.character == Character::Bob || m.difficulty_quartile != Quartile::Easy {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = (l * 31 + k) as f32 * 7.5;
                    }
                }
            },
            store.metas().to_vec(),
        );
        let again = fit_detector(&scrambled, Method::DiffMeans, CovarianceVariant::Full, 0).unwrap();
        assert_eq!(det, again);
    }

    #[test]
    fn determinism_of_serialization() {
        let store = world(3, 3, |_| {});
        let a = fit_detector(&store, Method::Lda, CovarianceVariant::DiagSubtracted, 4).unwrap();
        let b = fit_detector(&store, Method::Lda, CovarianceVariant::DiagSubtracted, 4).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.json");
        a.write(&path).unwrap();
        assert_eq!(AnomalyDetector::read(&path).unwrap(), a);
    }

    /// Keeps only layer `keep` (0-indexed) of a store.
    fn one_layer(store: &ActivationStore, keep: usize) -> ActivationStore {
        let mut manifest = store.manifest().clone();
        manifest.layer_count = 1;
        let slabs = crate::store::Position::ALL
            .iter()
            .map(|&pos| vec![store.slab(keep, pos).unwrap().to_vec()])
            .collect();
        ActivationStore::new(manifest, slabs, store.metas().to_vec()).unwrap()
    }

    #[test]
    fn single_layer_scores_are_abs_z() {
        let store = one_layer(&world(3, 4, |_| {}), 1);
        let det = fit_detector(&store, Method::Logr, CovarianceVariant::Full, 0).unwrap();
        let view = store.select(&Filter::slice("BH").unwrap()).unwrap();
        let f = det.features(&view).unwrap();
        let got = det.score_features(&f).unwrap();
        let (mu, var) = (det.fit.mean[0], det.fit.covariance[(0, 0)]);
        for (i, s) in got.iter().enumerate() {
            let z = ((f[(i, 0)] - mu) / var.sqrt()).abs();
            assert!((s - z).abs() < 1e-10 * (1.0 + z));
        }
    }

    #[test]
    fn reference_mean_scores_zero_and_scores_nonnegative() {
        let store = world(4, 5, |_| {});
        for v in [CovarianceVariant::Full, CovarianceVariant::DiagSubtracted] {
            let det = fit_detector(&store, Method::Logr, v, 0).unwrap();
            let at_mean = det.score_features(&DMatrix::from_row_slice(1, det.fit.dim(), det.fit.mean.as_slice())).unwrap();
            assert_eq!(at_mean, vec![0.0]);
            let scores = det.score(&store, &Filter::default()).unwrap();
            assert_eq!(scores.len(), store.len());
            assert!(scores.iter().all(|s| s.score >= 0.0));
        }
    }

    #[test]
    fn affine_map_of_features_leaves_scores_unchanged() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let det = fit_detector(&world(5, 6, |_| {}), Method::Logr, CovarianceVariant::Full, 0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut gauss = |r, c| DMatrix::<f64>::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let reference = gauss(400, 5);
        let probe = gauss(50, 5) * 2.0;
        let a = gauss(5, 5) + DMatrix::identity(5, 5) * 3.0;
        let c = gauss(1, 5);
        let map = |m: &DMatrix<f64>| {
            let mut out = m * a.transpose();
            for mut row in out.row_iter_mut() {
                row += &c;
            }
            out
        };
        let plain = AnomalyDetector {
            fit: GaussianFit::fit(&reference).unwrap(),
            ..det.clone()
        };
        let mapped = AnomalyDetector {
            fit: GaussianFit::fit(&map(&reference)).unwrap(),
            ..det
        };
        let s0 = plain.score_features(&probe).unwrap();
        let s1 = mapped.score_features(&map(&probe)).unwrap();
        for (x, y) in s0.iter().zip(&s1) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
    }

    #[test]
    fn single_class_reference_is_an_error() {
        let store = world(3, 7, |_| {});
        let metas: Vec<_> = store
            .metas()
            .iter()
            .cloned()
            .map(|mut m| {
                if m.difficulty_quartile == Quartile::Easy {
                    m.alice_label = 1;
                }
                m
            })
            .collect();
        let one_class = rebuild(&store, |_, _, _| {}, metas);
        assert!(fit_detector(&one_class, Method::Logr, CovarianceVariant::Full, 0).is_err());
    }

    #[test]
    fn layer_mismatch_is_rejected() {
        let det = fit_detector(&world(3, 8, |_| {}), Method::Logr, CovarianceVariant::Full, 0).unwrap();
        let other = world(4, 8, |_| {});
        assert!(matches!(det.score(&other, &Filter::default()), Err(Error::Shape(_))));
    }
}
