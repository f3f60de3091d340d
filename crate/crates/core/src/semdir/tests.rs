use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::numerics::GradCheckOptions;
use crate::scenegen::{background_image, make_pose_dataset};
use crate::stylegan::NUM_BLOCKS;

fn random_rows(n: usize, dim: usize, seed_: u64) -> Vec<Vec<f32>> {
    let mut rng = seed::rng(seed_);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn planted(seed_: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed_);
    (0..W_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], w: &[f32]) -> f64 {
    a.iter().zip(w).map(|(a, &w)| a * w as f64).sum()
}

#[test]
fn probe_recovers_exact_linear_coefficients() {
    let rows = random_rows(400, W_DIM, 1);
    let a = planted(2);
    let y: Vec<f64> = rows.iter().map(|w| dot(&a, w) + 3.25).collect();
    let p = fit_probe(&rows, &y, Some(0.0)).unwrap();
    let err = p.weights.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
    assert!((p.bias - 3.25).abs() < 1e-6);
    assert!((p.r2 - 1.0).abs() < 1e-9);
    assert_eq!(p.n, 400);
}

#[test]
fn constant_target_gives_zero_weights() {
    let rows = random_rows(100, W_DIM, 3);
    let p = fit_probe(&rows, &[7.5; 100], Some(0.0)).unwrap();
    assert!(p.weights.iter().all(|w| w.abs() < 1e-9));
    assert!((p.bias - 7.5).abs() < 1e-9);
}

#[test]
fn ridge_shrinks_weights_monotonically() {
    let rows = random_rows(200, W_DIM, 4);
    let a = planted(5);
    let y: Vec<f64> = rows.iter().map(|w| dot(&a, w)).collect();
    let norms: Vec<f64> = [0.0, 1.0, 1e2, 1e4, 1e6, 1e9]
        .iter()
        .map(|&l| fit_probe(&rows, &y, Some(l)).unwrap().weights.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    assert!(norms.windows(2).all(|p| p[1] < p[0]), "{norms:?}");
    assert!(norms[5] < 1e-3 * norms[0]);
}

#[test]
fn singular_system_needs_positive_lambda() {
    let mut rows = random_rows(100, W_DIM, 6);
    for r in &mut rows {
        r[1] = r[0];
    }
    let y: Vec<f64> = rows.iter().map(|r| r[2] as f64).collect();
    assert!(matches!(fit_probe(&rows, &y, Some(0.0)), Err(Error::Singular(_))));
    assert!(fit_probe(&rows, &y, Some(1.0)).is_ok());
    assert!(fit_probe(&rows, &y, None).is_ok());
    assert!(fit_probe(&rows[..10], &y[..10], Some(1.0)).is_err());
}

#[test]
fn default_lambda_scales_with_data() {
    let rows = random_rows(100, W_DIM, 7);
    let doubled: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
    let l1 = default_lambda(&rows);
    assert!((default_lambda(&doubled) / l1 - 4.0).abs() < 1e-9);
}

fn probe_with(weights: Vec<f64>) -> PoseProbe {
    PoseProbe { weights, bias: 0.0, lambda: 0.0, r2: 1.0, n: 100 }
}

#[test]
fn threshold_example_by_hand() {
    let d = extract_direction(&probe_with(vec![0.5, 0.01, -0.8]), 0.1).unwrap();
    let want = [0.5 / 0.89f64.sqrt(), 0.0, -0.8 / 0.89f64.sqrt()];
    for (g, w) in d.values.iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert!((d.values[0] - 0.530).abs() < 1e-3 && (d.values[2] + 0.848).abs() < 1e-3);
    assert_eq!(d.values[1], 0.0);
    assert_eq!(d.mask, vec![true, false, true]);
    assert_eq!(d.kept(), 2);
}

#[test]
fn zero_threshold_and_single_weight() {
    let d = extract_direction(&probe_with(vec![3.0, -4.0]), 0.0).unwrap();
    assert_eq!(d.values, vec![0.6, -0.8]);
    assert_eq!(d.mask, vec![true, true]);
    let d = extract_direction(&probe_with(vec![0.0, -2.5, 0.0]), 0.5).unwrap();
    assert_eq!(d.values, vec![0.0, -1.0, 0.0]);
    assert!(extract_direction(&probe_with(vec![0.0; 4]), 0.1).is_err());
    assert!(extract_direction(&probe_with(vec![1.0]), 1.0).is_err());
}

proptest! {
    #[test]
    fn direction_is_unit_with_exact_zeros(a in prop::collection::vec(-5.0f64..5.0, 1..80), tau in 0.0f64..0.99) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3));
        let d = extract_direction(&probe_with(a), tau).unwrap();
        let norm = d.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-6);
        for (v, m) in d.values.iter().zip(&d.mask) {
            if !m { prop_assert_eq!(*v, 0.0); }
        }
    }

    #[test]
    fn probe_shift_along_direction_is_linear(
        w in prop::collection::vec(-2.0f32..2.0, W_DIM),
        c in -3.0f64..3.0,
        s in 0u64..50,
    ) {
        let probe = PoseProbe { bias: 1.5, ..probe_with(planted(s)) };
        let d = extract_direction(&probe, DEFAULT_TAU).unwrap();
        let lw = LatentW::w(w).unwrap();
        let moved = traverse(&lw, &d, c);
        let lhs = probe.predict(moved.values()) - probe.predict(lw.values());
        let rhs = c * d.probe_gain;
        prop_assert!((lhs - rhs).abs() < 1e-5, "{} vs {}", lhs, rhs);
    }
}

#[test]
fn traverse_identity_and_w_plus_blocks() {
    let d = extract_direction(&probe_with(planted(1)), 0.1).unwrap();
    let w = LatentW::w(random_rows(1, W_DIM, 9).remove(0)).unwrap();
    assert_eq!(traverse(&w, &d, 0.0), w);
    let wp = traverse(&w.to_w_plus(), &d, 2.0);
    let ww = traverse(&w, &d, 2.0);
    for b in 0..NUM_BLOCKS {
        assert_eq!(wp.block(b), ww.values());
    }
}

#[test]
fn background_only_image_is_filtered_out() {
    let bg = background_image(2);
    assert_eq!(foreground_fraction(&bg), 0.0);
    let corpus = Corpus {
        latents: vec![LatentW::w(vec![0.0; W_DIM]).unwrap(); 2],
        images: vec![bg.clone(), Image::filled(SIZE, SIZE, [1.0, 0.0, 1.0])],
    };
    let (kept, r) = filter_corpus(&corpus, 0.0, 1.0).unwrap();
    assert_eq!((kept.len(), r.kept, r.total), (2, 2, 2));
    let (kept, _) = filter_corpus(&corpus, 0.05, 1.0).unwrap();
    assert_eq!(kept.images, vec![Image::filled(SIZE, SIZE, [1.0, 0.0, 1.0])]);
    let err = filter_corpus(&Corpus { latents: corpus.latents[..1].to_vec(), images: vec![bg] }, 0.05, 0.6);
    assert!(matches!(err, Err(Error::Empty(ref m)) if m.contains("widen")));
    assert!(filter_corpus(&corpus, 0.5, 0.5).is_err());
}

#[test]
fn corpus_is_deterministic_and_centred_on_mean_w() {
    let b = GanBundle::init(3).unwrap();
    assert!(sample_corpus(Exec::Sequential, &b, 99, 0).is_err());
    let c1 = sample_corpus(Exec::Sequential, &b, 100, 5).unwrap();
    let c2 = sample_corpus(Exec::Parallel, &b, 100, 5).unwrap();
    assert_eq!(c1.latents, c2.latents);
    assert_eq!(c1.images, c2.images);

    let n = 2000;
    let big = sample_corpus(Exec::Parallel, &b, n, 6).unwrap();
    let stats = b.estimate_w_stats(10_000, 7).unwrap();
    // Three standard errors per test, Bonferroni-corrected for 64 dimensions
    // (family-wise level equal to a single 3σ test, ~0.27%).
    let z = 4.1;
    for j in 0..W_DIM {
        let mean = big.latents.iter().map(|w| w.values()[j] as f64).sum::<f64>() / n as f64;
        let sd = stats.std[j] as f64;
        let se = sd * (1.0 / n as f64 + 1.0 / 10_000.0).sqrt();
        assert!((mean - stats.mean[j] as f64).abs() <= z * se, "dim {j}: {} vs {} se {se}", mean, stats.mean[j]);
    }
}

#[test]
fn oracle_passes_gradient_check() {
    let r = check_oracle_grads(0, &GradCheckOptions::default()).unwrap();
    assert!(r.passed, "{r:#?}");
}

#[test]
fn oracle_memorises_small_batch_and_is_deterministic() {
    let data = make_pose_dataset(64, 3).unwrap();
    let cfg = OracleConfig { epochs: 150, batch: 16, val_fraction: 0.0, flip: false, max_mae: 2.0, lr: 2e-3, seed: 1 };
    let (o, r) = train_pose_oracle(Exec::Sequential, &data, &cfg).unwrap();
    assert!(r.train_mae < 2.0, "{r:?}");
    let cfg = OracleConfig { epochs: 2, ..cfg };
    let fail = train_pose_oracle(Exec::Sequential, &data, &OracleConfig { max_mae: 0.0, ..cfg.clone() });
    assert!(matches!(fail, Err(Error::Gate(_))));
    let a = train_pose_oracle(Exec::Sequential, &data, &OracleConfig { max_mae: 90.0, ..cfg.clone() }).unwrap();
    let b = train_pose_oracle(Exec::Parallel, &data, &OracleConfig { max_mae: 90.0, ..cfg }).unwrap();
    assert_eq!(a.0.params.checksum(), b.0.params.checksum());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.ckpt");
    o.save(&path, &r).unwrap();
    let (back, rep) = PoseOracle::load(&path).unwrap();
    assert_eq!(rep, r);
    assert_eq!(back.predict(Exec::Sequential, &data.images), o.predict(Exec::Sequential, &data.images));
}

#[test]
fn uniform_yaw_constant_baseline_is_37_5_degrees() {
    let data = make_pose_dataset(4000, 8).unwrap();
    let y = pose_labels(&data).unwrap();
    let mae0 = y.iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64;
    // Mean |yaw| for yaw ~ U(-75, 75) is 37.5; the sample has std 75/√12/√n.
    assert!((mae0 - 37.5).abs() < 3.0 * 75.0 / 12f64.sqrt() / (y.len() as f64).sqrt());
}

fn untrained() -> (GanBundle, PoseOracle) {
    let b = GanBundle::init(21).unwrap();
    let o = PoseOracle { params: init_oracle(4).unwrap() };
    (b, o)
}

#[test]
fn calibration_of_inert_dimensions_is_zero() {
    let (mut b, o) = untrained();
    // Cut dimensions 0..8 off from every style affine: they can no longer
    // influence the image.
    for blk in 0..NUM_BLOCKS {
        let w = b.generator.get_mut(&format!("syn.b{blk}.style.w")).unwrap();
        let cols = w.dim(1);
        for (i, v) in w.data_mut().iter_mut().enumerate() {
            if i % cols < 8 {
                *v = 0.0;
            }
        }
    }
    let mut a = vec![0.0; W_DIM];
    a[..8].iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + i as f64);
    let d = extract_direction(&probe_with(a), 0.0).unwrap();
    let lat = sample_corpus(Exec::Parallel, &b, 100, 1).unwrap().latents;
    assert_eq!(calibrate(Exec::Parallel, &d, &b, &o, &lat, 1.0).unwrap(), 0.0);
}

#[test]
fn calibrated_coefficients_and_monotonicity() {
    let mut d = extract_direction(&probe_with(vec![1.0, 0.0]), 0.0).unwrap();
    assert!(calibrated_coefficients(&d, &[1.0]).is_err());
    d.degrees_per_unit = Some(-5.0);
    assert_eq!(calibrated_coefficients(&d, &[-1.0, 0.0, 2.0]).unwrap(), vec![2.0, 0.0, -4.0]);
    assert!(is_monotone(&[1.0, 1.0, 3.0], true));
    assert!(!is_monotone(&[1.0, 0.5, 3.0], true));
    assert!(is_monotone(&[3.0, 0.5, 0.5], false));
    let rows = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0], vec![0.0, 5.0]];
    assert_eq!(monotone_fraction(&rows, true), 0.75);
}

#[test]
fn direction_json_round_trip_validates_norm() {
    let d = extract_direction(&probe_with(planted(4)), 0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.json");
    d.save(&p).unwrap();
    assert_eq!(DirectionVector::load(&p).unwrap(), d);
    let mut bad = d.clone();
    bad.values[0] += 0.5;
    bad.save(&p).unwrap();
    assert!(DirectionVector::load(&p).is_err());
}

#[test]
fn sweep_shapes() {
    let (b, o) = untrained();
    let d = extract_direction(&probe_with(planted(6)), 0.1).unwrap();
    let lat = sample_corpus(Exec::Sequential, &b, 100, 3).unwrap().latents;
    let rows = pose_sweep(Exec::Sequential, &b, &o, &d, &lat[..3], &[-1.0, 0.0, 1.0]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.len() == 3));
    let strip = sweep_strip(Exec::Sequential, &b, &d, &lat[..2], &[-1.0, 0.0, 1.0, 2.0]).unwrap();
    assert_eq!((strip.height, strip.width), (2 * (SIZE + 1) + 1, 4 * (SIZE + 1) + 1));
}
