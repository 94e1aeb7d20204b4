use super::*;
use crate::world::{gen_world, WorldConfig};

fn small_world(n: usize, seed: u64, tweak: impl FnOnce(&mut WorldConfig)) -> ActivationStore {
    let mut cfg = WorldConfig {
        d: 16,
        layers: 6,
        ..WorldConfig::default()
    };
    tweak(&mut cfg);
    gen_world(&cfg, n, seed).unwrap().store
}

fn quick() -> TransferConfig {
    TransferConfig {
        seed: 3,
        train: TrainConfig {
            ccs_restarts: 2,
            ..TrainConfig::default()
        },
        ..TransferConfig::default()
    }
}

#[test]
fn experiment_names_round_trip() {
    for e in Experiment::ALL {
        assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
    }
    assert_eq!("AE->BH".parse::<Experiment>().unwrap(), Experiment::AeToBh);
    assert_eq!("ae→bh".parse::<Experiment>().unwrap(), Experiment::AeToBh);
    assert!("XY".parse::<Experiment>().is_err());
}

#[test]
fn standard_specs() {
    let s = Experiment::BToA.spec();
    assert_eq!(s.train_labels, LabelSet::Bob);
    assert_eq!(s.eval_labels, LabelSet::Alice);
    assert!(s.disagreement_only);
    assert_eq!(describe_filter(&s.train_filter), "B/train");
    assert_eq!(describe_filter(&s.eval_filter), "A/test");
    let s = Experiment::AllToBh.spec();
    assert!(s.unsupervised_only && !s.disagreement_only);
    assert_eq!(describe_filter(&s.train_filter), "all/train");
    assert_eq!(describe_filter(&Experiment::AeToBh.spec().eval_filter), "BH/test");
}

#[test]
fn held_out_partition() {
    let (fit, hold) = held_out_split(101, 9);
    assert_eq!(hold.len(), 20);
    assert_eq!(fit.len(), 81);
    let mut all: Vec<usize> = fit.iter().chain(&hold).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..101).collect::<Vec<_>>());
    assert_eq!(held_out_split(101, 9), (fit, hold));
    assert_ne!(held_out_split(101, 10).1, held_out_split(101, 9).1);
    assert_eq!(held_out_split(2, 0).1.len(), 1);
}

#[test]
fn self_transfer_equals_in_distribution() {
    let store = small_world(1600, 1, |_| {});
    let mut spec = Experiment::AeToAh.spec();
    spec.eval_filter = spec.train_filter.clone();
    let report = run_transfer(&store, &spec, &[Method::Logr, Method::DiffMeans], &quick()).unwrap();
    assert_eq!(report.n_eval, report.n_heldout);
    for c in &report.cells {
        assert!(c.auroc_id.is_some(), "{c:?}");
        assert_eq!(c.auroc_id, c.auroc_transfer);
    }
}

#[test]
fn empty_disagreement_is_an_error() {
    let store = small_world(800, 2, |c| c.label_correlation = 1.0);
    let err = run_transfer(&store, &Experiment::AToB.spec(), &[Method::Logr], &quick()).unwrap_err();
    assert!(matches!(err, Error::EmptyDisagreement), "{err}");
}

#[test]
fn layer_out_of_range() {
    let store = small_world(400, 2, |_| {});
    let cfg = TransferConfig {
        layers: Some(vec![7]),
        ..quick()
    };
    let err = run_transfer(&store, &Experiment::AeToBh.spec(), &[Method::Logr], &cfg).unwrap_err();
    assert!(matches!(err, Error::LayerOutOfRange { layer: 7, layer_count: 6 }));
}

#[test]
fn ae_to_bh_report_shape_and_determinism() {
    let store = small_world(4000, 5, |_| {});
    let methods = [Method::Logr, Method::Lda, Method::Crc, Method::Random];
    let spec = Experiment::AeToBh.spec();
    let a = run_transfer(&store, &spec, &methods, &quick()).unwrap();
    let b = run_transfer(&store, &spec, &methods, &quick()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.cells.len(), methods.len() * 6);
    assert_eq!(a.summaries.len(), methods.len());
    let (floor, ceil) = (a.floor_auroc.unwrap(), a.ceil_auroc.unwrap());
    assert!((floor - 0.5).abs() < 0.08 && ceil > 0.8, "floor {floor} ceil {ceil}");
    let logr = a.summary(Method::Logr).unwrap();
    let eil = logr.eil_layer.unwrap();
    assert!((1..=6).contains(&eil));
    assert!(logr.auroc_id_at_eil.unwrap() > 0.8);
    let p = logr.pgr.unwrap();
    let expect = (logr.auroc_transfer_at_eil.unwrap() - floor) / (ceil - floor);
    assert!((p - expect).abs() < 1e-12);
    // Final-layer probes track Bob's output rather than Alice's labels.
    assert!(logr.auroc_transfer_final.unwrap() < logr.auroc_transfer_at_eil.unwrap());
}

#[test]
fn unsupervised_only_skips_supervised_methods() {
    let store = small_world(1200, 6, |_| {});
    let cfg = TransferConfig {
        layers: Some(vec![2, 3]),
        ..quick()
    };
    let r = run_transfer(&store, &Experiment::AllToBh.spec(), &[Method::Logr, Method::Crc], &cfg).unwrap();
    assert!(r.summary(Method::Logr).is_none());
    assert_eq!(r.cells.len(), 2);
    assert!(r.cells.iter().all(|c| c.method == Method::Crc && c.error.is_none()));
}

#[test]
fn failing_cells_are_recorded_not_fatal() {
    // CCS needs 16 pairs; a tiny training slice makes it fail per cell.
    let store = small_world(120, 7, |_| {});
    let mut spec = Experiment::AeToBh.spec();
    spec.max_train = 12;
    let cfg = TransferConfig {
        layers: Some(vec![1]),
        ..quick()
    };
    let r = run_transfer(&store, &spec, &[Method::Ccs, Method::DiffMeans], &cfg).unwrap();
    let ccs = r.cell(Method::Ccs, 1).unwrap();
    assert!(ccs.error.is_some() && ccs.auroc_transfer.is_none());
    assert!(r.cell(Method::DiffMeans, 1).unwrap().auroc_transfer.is_some());
}
