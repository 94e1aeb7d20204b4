use super::*;
use crate::numerics::{fit_platt, sigmoid};
use rand::Rng;

fn gaussians(n: usize, d: usize, gap: f64, seed: u64) -> (DMatrix<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x = DMatrix::from_fn(n, d, |i, j| {
        let z: f64 = rng.sample::<f64, _>(StandardNormal);
        if j == 0 {
            z + gap * (2.0 * f64::from(labels[i]) - 1.0)
        } else {
            z
        }
    });
    (x, labels)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (DVector::from_column_slice(a), DVector::from_column_slice(b));
    a.dot(&b) / (a.norm() * b.norm())
}

fn flipped(labels: &[u8]) -> Vec<u8> {
    labels.iter().map(|l| 1 - l).collect()
}

#[test]
fn logr_recovers_bayes_direction() {
    let (x, y) = gaussians(5000, 8, 1.0, 1);
    let p = train_logr(&x, &y, LOGR_L2).unwrap();
    assert!(cos(&p.w, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]) >= 0.99);
    let g = logr::logr_gradient(&x, &y, LOGR_L2, &p);
    assert!(g.amax() < 1e-6, "{}", g.amax());
}

#[test]
fn logr_label_flip_negates() {
    let (x, y) = gaussians(400, 5, 0.7, 2);
    let p = train_logr(&x, &y, LOGR_L2).unwrap();
    let q = train_logr(&x, &flipped(&y), LOGR_L2).unwrap();
    for (a, b) in p.w.iter().zip(&q.w) {
        assert!((a + b).abs() < 1e-6);
    }
    assert!((p.b + q.b).abs() < 1e-6);
}

#[test]
fn logr_duplication_invariant() {
    let (x, y) = gaussians(300, 4, 0.5, 3);
    let mut x2 = DMatrix::zeros(600, 4);
    x2.view_mut((0, 0), (300, 4)).copy_from(&x);
    x2.view_mut((300, 0), (300, 4)).copy_from(&x);
    let y2 = [y.clone(), y.clone()].concat();
    let p = train_logr(&x, &y, LOGR_L2).unwrap();
    let q = train_logr(&x2, &y2, LOGR_L2).unwrap();
    for (a, b) in p.w.iter().zip(&q.w) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn logr_errors() {
    let (x, _) = gaussians(10, 3, 1.0, 4);
    assert!(matches!(train_logr(&x, &[1; 10], LOGR_L2), Err(Error::DegenerateClasses)));
    let mut bad = x.clone();
    bad[(0, 0)] = f64::NAN;
    let y: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
    assert!(matches!(train_logr(&bad, &y, LOGR_L2), Err(Error::NonFinite(_))));
}

#[test]
fn logr_handles_separable_data() {
    let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
    let p = train_logr(&x, &[0, 0, 1, 1], LOGR_L2).unwrap();
    assert!(p.w[0] > 0.0 && p.w[0].is_finite());
}

#[test]
fn diff_means_hand_case() {
    let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let p = train_diff_means(&x, &[1, 0]).unwrap();
    assert_eq!(p.w, vec![1.0, -1.0]);
    assert_eq!(p.b, 0.0);
}

#[test]
fn diff_means_centers_balanced_scores() {
    let (x, y) = gaussians(200, 6, 0.3, 5);
    let p = train_diff_means(&x, &y).unwrap();
    let s = p.raw_scores(&Inputs::Single(x)).unwrap();
    assert!((s.iter().sum::<f64>() / s.len() as f64).abs() < 1e-10);
}

#[test]
fn diff_means_degenerate() {
    let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert!(matches!(train_diff_means(&x, &[1, 0]), Err(Error::DegenerateDirection)));
}

#[test]
fn diff_means_agrees_with_discriminative_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..30 {
        let d = rng.random_range(2..10);
        let (mut x, y) = gaussians(300, d, rng.random_range(0.3..1.5), 100 + trial);
        // Random linear mixing keeps the data informative but non-isotropic.
        let a = DMatrix::from_fn(d, d, |i, j| {
            let z: f64 = rng.sample::<f64, _>(StandardNormal);
            if i == j { 1.0 + 0.3 * z } else { 0.3 * z }
        });
        x *= a;
        let dm = train_diff_means(&x, &y).unwrap();
        let lr = train_logr(&x, &y, LOGR_L2).unwrap();
        let lda = train_lda(&x, &y).unwrap();
        assert!(dm.weights().dot(&lr.weights()) > 0.0, "trial {trial}");
        assert!(dm.weights().dot(&lda.weights()) > 0.0, "trial {trial}");
    }
}

#[test]
fn lda_isotropic_matches_diff_means() {
    let (x, y) = gaussians(20_000, 4, 0.5, 7);
    let lda = train_lda(&x, &y).unwrap();
    let dm = train_diff_means(&x, &y).unwrap();
    assert!(cos(&lda.w, &dm.w) >= 0.999);
}

#[test]
fn lda_diagonal_solve() {
    let offsets = [(10.0, 1.0), (10.0, -1.0), (-10.0, 1.0), (-10.0, -1.0)];
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (label, mx) in [(1u8, 3.0), (0u8, 0.0)] {
        for (ox, oy) in offsets {
            rows.extend([mx + ox, oy]);
            y.push(label);
        }
    }
    let x = DMatrix::from_row_slice(8, 2, &rows);
    let p = train_lda(&x, &y).unwrap();
    let (s11, s22) = (800.0 / 6.0, 8.0 / 6.0);
    let lambda = 1e-3 * (s11 + s22) / 2.0;
    assert!((p.w[0] - 3.0 / (s11 + lambda)).abs() < 1e-12);
    assert!(p.w[1].abs() < 1e-12);
}

#[test]
fn lda_matches_solve_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let d = 5;
        let (x, y) = gaussians(200, d, 0.8, 200 + seed);
        let mix = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        let x = x * mix;
        let p = train_lda(&x, &y).unwrap();
        let (m1, m0) = class_means(&x, &y);
        let mut s = DMatrix::<f64>::zeros(d, d);
        for (row, &l) in x.row_iter().zip(&y) {
            let c = row.transpose() - if l == 1 { &m1 } else { &m0 };
            s += &c * c.transpose();
        }
        s /= 198.0;
        let lambda = 1e-3 * s.trace() / d as f64;
        s += DMatrix::identity(d, d) * lambda;
        let w = s.lu().solve(&(&m1 - &m0)).unwrap();
        let rel = (p.weights() - &w).norm() / w.norm();
        assert!(rel < 1e-8, "{rel}");
    }
}

fn contrast_world(n: usize, d: usize, strength: f64, noise: f64, seed: u64) -> (ContrastBatch, Vec<u8>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    // Branch-identity offset, orthogonal to the planted direction.
    let ones = DVector::from_element(d, 1.0);
    let offset = (&ones - &u * u.dot(&ones)).normalize() * 0.5;
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let mut pos = DMatrix::zeros(n, d);
    let mut neg = DMatrix::zeros(n, d);
    for i in 0..n {
        let shared = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sign = 2.0 * f64::from(labels[i]) - 1.0;
        for j in 0..d {
            let zp: f64 = rng.sample::<f64, _>(StandardNormal);
            let zn: f64 = rng.sample::<f64, _>(StandardNormal);
            pos[(i, j)] = shared[j] + strength * sign * u[j] + offset[j] + noise * zp;
            neg[(i, j)] = shared[j] - strength * sign * u[j] - offset[j] + noise * zn;
        }
    }
    (ContrastBatch::new(pos, neg).unwrap(), labels, u)
}

#[test]
fn ccs_loss_arithmetic() {
    assert!((ccs_pair_loss(0.8, 0.3) - 0.10).abs() < 1e-12);
    assert!((ccs_pair_loss(0.5, 0.5) - 0.25).abs() < 1e-12);
}

#[test]
fn ccs_on_antisymmetric_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d) = (400, 10);
    let u = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
    let pos = DMatrix::from_fn(n, d, |i, j| {
        let z: f64 = rng.sample::<f64, _>(StandardNormal);
        (2.0 * f64::from(labels[i]) - 1.0) * u[j] + 0.1 * z
    });
    let batch = ContrastBatch::new(pos.clone(), -pos).unwrap();
    let fit = train_ccs(&batch, 10, 0).unwrap();
    assert!(fit.loss <= 0.01, "{}", fit.loss);
    assert_eq!(fit.restart_losses.len(), 10);
    let scores = fit.probe.raw_scores(&Inputs::Pair(batch)).unwrap();
    let a = auroc(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() >= 0.45, "{a}");
}

#[test]
fn ccs_beats_constant_solution_and_resolves() {
    let (batch, labels, _) = contrast_world(600, 12, 1.0, 0.5, 10);
    let fit = train_ccs(&batch, 10, 1).unwrap();
    assert!(fit.loss < 0.25);
    let inputs = Inputs::Pair(batch);
    let probe = fit.probe.resolve_sign(&inputs, &labels, SignMode::Auroc, "test").unwrap();
    let a = auroc(&probe.raw_scores(&inputs).unwrap(), &labels).unwrap();
    assert!(a >= 0.9, "{a}");
    // Same seed, same probe.
    let again = train_ccs(inputs.pair(Method::Ccs).unwrap(), 10, 1).unwrap();
    assert_eq!(again.loss, fit.loss);
}

#[test]
fn ccs_needs_pairs() {
    let (batch, _, _) = contrast_world(10, 3, 1.0, 0.1, 11);
    assert!(train_ccs(&batch, 10, 0).is_err());
}

#[test]
fn crc_finds_planted_direction() {
    let (batch, labels, u) = contrast_world(2000, 16, 1.0, 0.1, 12);
    let probe = train_crc(&batch).unwrap();
    assert!(cos(&probe.w, u.as_slice()).abs() >= 0.99);
    let inputs = Inputs::Pair(batch);
    let probe = probe.resolve_sign(&inputs, &labels, SignMode::Auroc, "test").unwrap();
    assert!(auroc(&probe.raw_scores(&inputs).unwrap(), &labels).unwrap() >= 0.95);
}

#[test]
fn crc_degenerate_when_branches_equal() {
    let (batch, _, _) = contrast_world(50, 4, 1.0, 0.1, 13);
    let same = ContrastBatch::new(batch.pos.clone(), batch.pos.clone()).unwrap();
    assert!(matches!(train_crc(&same), Err(Error::DegenerateSpectrum)));
}

#[test]
fn contrast_supervised_halves_are_antisymmetric() {
    let (batch, labels, _) = contrast_world(3000, 8, 0.5, 0.3, 14);
    for method in [Method::LogrContrast, Method::DiffMeansContrast] {
        let p = train_contrast_supervised(&batch, &labels, method, LOGR_L2).unwrap();
        assert_eq!(p.method, method);
        let neg_second: Vec<f64> = p.w[8..].iter().map(|v| -v).collect();
        assert!(cos(&p.w[..8], &neg_second) >= 0.9, "{method}");
    }
}

#[test]
fn contrast_supervised_zero_negative_branch() {
    let (batch, labels, _) = contrast_world(200, 5, 1.0, 0.3, 15);
    let zero = ContrastBatch::new(batch.pos.clone(), DMatrix::zeros(200, 5)).unwrap();
    let p = train_contrast_supervised(&zero, &labels, Method::DiffMeansContrast, LOGR_L2).unwrap();
    assert!(p.w[5..].iter().all(|v| *v == 0.0));
    let single = train_diff_means(&batch.pos, &labels).unwrap();
    assert_eq!(&p.w[..5], single.w.as_slice());
}

#[test]
fn contrast_supervised_permutation_invariant() {
    let (batch, labels, _) = contrast_world(200, 5, 1.0, 0.3, 16);
    let order: Vec<usize> = (0..200).rev().collect();
    let permuted = batch.rows(&order);
    let plabels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
    let a = train_contrast_supervised(&batch, &labels, Method::LogrContrast, LOGR_L2).unwrap();
    let b = train_contrast_supervised(&permuted, &plabels, Method::LogrContrast, LOGR_L2).unwrap();
    for (x, y) in a.w.iter().zip(&b.w) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn sign_resolution_flips_bad_probes() {
    let (x, y) = gaussians(500, 3, 0.4, 17);
    let inputs = Inputs::Single(x);
    let good = train_diff_means(inputs.single(Method::DiffMeans).unwrap(), &y).unwrap();
    let mut bad = good.clone();
    bad.negate();
    let before = auroc(&bad.raw_scores(&inputs).unwrap(), &y).unwrap();
    assert!(before < 0.5);
    for mode in [SignMode::Auroc, SignMode::Platt] {
        let fixed = bad.clone().resolve_sign(&inputs, &y, mode, "src").unwrap();
        let after = auroc(&fixed.raw_scores(&inputs).unwrap(), &y).unwrap();
        assert!((after - (1.0 - before)).abs() < 1e-12);
        let kept = good.clone().resolve_sign(&inputs, &y, mode, "src").unwrap();
        assert_eq!(kept.w, good.w);
        assert_eq!(kept.sign_resolved_on.as_deref(), Some("src"));
    }
    let single = vec![1u8; 500];
    assert!(matches!(
        good.resolve_sign(&inputs, &single, SignMode::Auroc, "src"),
        Err(Error::DegenerateClasses)
    ));
}

#[test]
fn platt_and_auroc_modes_can_disagree() {
    // Search small instances with skewed scores for a sign disagreement.
    let mut found = false;
    for seed in 0..20_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 7;
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(4) * 10.0 - 1.0).collect();
        let y: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let a_platt = fit_platt(ScoredLabels::new(&s, &y).unwrap()).unwrap().a;
        let a_auc = auroc(&s, &y).unwrap();
        if a_auc == 0.5 || (a_platt < 0.0) == (a_auc < 0.5) {
            continue;
        }
        let x = DMatrix::from_column_slice(n, 1, &s);
        let probe = Probe::new(Method::Random, 1, DVector::from_element(1, 1.0), 0.0);
        let inputs = Inputs::Single(x);
        let p = probe.clone().resolve_sign(&inputs, &y, SignMode::Platt, "s").unwrap();
        let q = probe.resolve_sign(&inputs, &y, SignMode::Auroc, "s").unwrap();
        assert_eq!(p.w[0] < 0.0, a_platt < 0.0);
        assert_eq!(q.w[0] < 0.0, a_auc < 0.5);
        assert_ne!(p.w[0].signum(), q.w[0].signum());
        found = true;
        break;
    }
    assert!(found);
}

#[test]
fn label_complement_gives_same_resolved_auroc() {
    let (x, y) = gaussians(400, 4, 0.6, 18);
    let inputs = Inputs::Single(x);
    let yc = flipped(&y);
    for method in [Method::Logr, Method::DiffMeans, Method::Lda] {
        let cfg = TrainConfig::default();
        let p = train_probe(method, &inputs, &y, 1, &cfg).unwrap().resolve_sign(&inputs, &y, SignMode::Platt, "s").unwrap();
        let q = train_probe(method, &inputs, &yc, 1, &cfg).unwrap().resolve_sign(&inputs, &y, SignMode::Platt, "s").unwrap();
        let a = auroc(&p.raw_scores(&inputs).unwrap(), &y).unwrap();
        let b = auroc(&q.raw_scores(&inputs).unwrap(), &y).unwrap();
        assert!((a - b).abs() < 1e-9, "{method}");
        assert!(a >= 0.5);
    }
}

#[test]
fn predict_logodds_calibration() {
    let (x, y) = gaussians(300, 3, 0.5, 19);
    let inputs = Inputs::Single(x);
    let mut p = train_diff_means(inputs.single(Method::DiffMeans).unwrap(), &y).unwrap();
    let raw = p.raw_scores(&inputs).unwrap();
    p.platt = Some(PlattParams::IDENTITY);
    assert_eq!(p.predict_logodds(&inputs).unwrap(), raw);

    let resolved = p.resolve_sign(&inputs, &y, SignMode::Platt, "s").unwrap();
    let fit = fit_platt(ScoredLabels::new(&raw, &y).unwrap()).unwrap();
    let probs: Vec<f64> = resolved.predict_logodds(&inputs).unwrap().into_iter().map(sigmoid).collect();
    for (p, s) in probs.iter().zip(&raw) {
        assert!((p - fit.prob(*s)).abs() < 1e-8);
    }
    // Calibration keeps the ordering.
    let lo = resolved.predict_logodds(&inputs).unwrap();
    for i in 1..raw.len() {
        assert_eq!(raw[i] > raw[0], lo[i] > lo[0]);
    }
}

#[test]
fn width_mismatch_is_an_error() {
    let (x, y) = gaussians(50, 3, 0.5, 20);
    let p = train_diff_means(&x, &y).unwrap();
    let wide = Inputs::Single(DMatrix::zeros(5, 4));
    assert!(matches!(p.raw_scores(&wide), Err(Error::Shape(_))));
    let (batch, _, _) = contrast_world(20, 3, 1.0, 0.1, 21);
    assert!(p.raw_scores(&Inputs::Pair(batch)).is_err());
}

#[test]
fn scores_are_affine() {
    let (batch, labels, _) = contrast_world(200, 6, 1.0, 0.3, 22);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let probes = [
        train_crc(&batch).unwrap(),
        train_contrast_supervised(&batch, &labels, Method::LogrContrast, LOGR_L2).unwrap(),
    ];
    for p in probes {
        let alpha: f64 = rng.random();
        let one = |i: usize| Inputs::Pair(batch.rows(&[i]));
        let mix = Inputs::Pair(ContrastBatch {
            pos: batch.pos.rows(0, 1) * alpha + batch.pos.rows(1, 1) * (1.0 - alpha),
            neg: batch.neg.rows(0, 1) * alpha + batch.neg.rows(1, 1) * (1.0 - alpha),
        });
        let s0 = p.raw_scores(&one(0)).unwrap()[0];
        let s1 = p.raw_scores(&one(1)).unwrap()[0];
        let sm = p.raw_scores(&mix).unwrap()[0];
        assert!((sm - (alpha * s0 + (1.0 - alpha) * s1)).abs() < 1e-10);
    }
}

#[test]
fn random_baseline_on_noise() {
    let (x, _) = gaussians(2000, 16, 0.0, 24);
    let y: Vec<u8> = (0..2000).map(|i| (i % 2) as u8).collect();
    let (xt, _) = gaussians(2000, 16, 0.0, 25);
    let base = random_probe_quantiles(&x, &y, &xt, &y, 10_000, 0).unwrap();
    let median = base.percentiles[3].1;
    assert!((median - 0.5).abs() < 0.02, "{median}");
    assert_eq!(base.percentiles.len(), 7);
}

#[test]
fn random_baseline_upper_quantiles_near_bayes() {
    let (x, y) = gaussians(4000, 2, 1.0, 26);
    let (xt, yt) = gaussians(4000, 2, 1.0, 27);
    let base = random_probe_quantiles(&x, &y, &xt, &yt, 2000, 1).unwrap();
    let bayes = 0.921_350_396_474_857_8; // Phi(sqrt(2))
    let p99 = base.percentiles[6].1;
    assert!((p99 - bayes).abs() < 0.02, "{p99}");
    let self_base = random_probe_quantiles(&x, &y, &x, &y, 2000, 2).unwrap();
    assert!(self_base.percentiles[0].1 >= 0.5);
}

#[test]
fn probe_json_round_trip() {
    let (batch, _, _) = contrast_world(50, 4, 1.0, 0.1, 28);
    let mut p = train_crc(&batch).unwrap();
    p.platt = Some(PlattParams { a: 2.0, b: -0.5 });
    p.sign_resolved_on = Some("AE/train".into());
    let text = serde_json::to_string(&p).unwrap();
    assert!(text.contains("\"method\":\"crc\""));
    assert!(text.contains("\"mu\""));
    let back: Probe = serde_json::from_str(&text).unwrap();
    assert_eq!(back, p);
}

#[test]
fn method_names_parse() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert_eq!("logr-contrast".parse::<Method>().unwrap(), Method::LogrContrast);
    assert!("svm".parse::<Method>().is_err());
}
