use super::*;
use crate::scenegen::{make_target_dataset, Dataset};

fn setup() -> (GanBundle, WStats) {
    let b = GanBundle::init(11).unwrap();
    let s = b.estimate_w_stats(10_000, 0).unwrap();
    (b, s)
}

fn synth(b: &GanBundle, seed_: u64) -> (LatentW, Image) {
    let (ws, imgs) = b.sample(Exec::Sequential, 1, seed_).unwrap();
    (ws[0].clone(), imgs[0].clone())
}

#[test]
fn lr_schedule_ramps_up_and_down() {
    let cfg = ProjectionConfig::default();
    assert_eq!(cfg.lr_at(0), 0.0);
    assert!((cfg.lr_at(200) - 0.05).abs() < 1e-12);
    assert!(cfg.lr_at(10) < cfg.lr_at(20));
    assert!(cfg.lr_at(390) < cfg.lr_at(320));
    assert!(cfg.lr_at(399) > 0.0);
}

#[test]
fn noise_schedule_decays_linearly_to_zero() {
    let cfg = ProjectionConfig::default();
    assert!((cfg.noise_at(0, 2.0) - 0.1).abs() < 1e-12);
    assert!((cfg.noise_at(150, 2.0) - 0.05).abs() < 1e-12);
    assert_eq!(cfg.noise_at(300, 2.0), 0.0);
    assert_eq!(cfg.noise_at(399, 2.0), 0.0);
}

#[test]
fn starting_at_the_answer_reconstructs_it() {
    let (b, s) = setup();
    let (w0, x) = synth(&b, 1);
    let cfg = ProjectionConfig { steps: 10, init: Init::Provided { w: w0 }, ..Default::default() };
    let r = project(&x, &b, &s, &cfg).unwrap();
    assert!(r.final_mse < 1e-4, "{}", r.final_mse);
    assert_eq!(r.loss_curve.len(), 10);
}

#[test]
fn projection_improves_loss_and_keeps_generator_frozen() {
    let (b, s) = setup();
    let before = b.generator_checksum();
    let (_, x) = synth(&b, 2);
    let cfg = ProjectionConfig { steps: 60, ..Default::default() };
    let r = project(&x, &b, &s, &cfg).unwrap();
    assert_eq!(b.generator_checksum(), before);
    assert_eq!(r.loss_curve.len(), 60);
    assert!(r.best_loss() <= r.loss_curve[0]);
    assert!(r.best_loss() < 0.8 * r.loss_curve[0], "{:?}", &r.loss_curve[..5]);
    let env = r.envelope();
    assert!(env.windows(2).all(|p| p[1] <= p[0]));
    // The returned latent really achieves the recorded pixel error.
    let img = b.synthesize(&r.w_star).unwrap();
    let mse = model_mse(&x, &img);
    assert!((mse - r.final_mse).abs() < 1e-4, "{mse} vs {}", r.final_mse);
}

#[test]
fn best_step_is_earliest_minimum() {
    let (b, s) = setup();
    let (_, x) = synth(&b, 3);
    let cfg = ProjectionConfig { steps: 30, ..Default::default() };
    let r = project(&x, &b, &s, &cfg).unwrap();
    let min = r.loss_curve.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_step, r.loss_curve.iter().position(|&l| l == min).unwrap());
}

#[test]
fn batch_equals_single_projection() {
    let (b, s) = setup();
    let imgs: Vec<Image> = (0..3).map(|i| synth(&b, 10 + i).1).collect();
    let cfg = ProjectionConfig { steps: 15, space: Space::WPlus, ..Default::default() };
    let joint = project_batch(&imgs, &[5, 6, 7], &b, &s, &cfg).unwrap();
    let single = project_batch(&imgs[1..2], &[6], &b, &s, &cfg).unwrap();
    assert_eq!(joint[1].best_step, single[0].best_step);
    for (a, c) in joint[1].loss_curve.iter().zip(&single[0].loss_curve) {
        assert!((a - c).abs() < 1e-5 * a.abs().max(1.0), "{a} vs {c}");
    }
    assert_eq!(joint[0].w_star.space(), Space::WPlus);
}

#[test]
fn projection_is_deterministic_across_execution_modes() {
    let (b, s) = setup();
    let imgs: Vec<Image> = (0..4).map(|i| synth(&b, 20 + i).1).collect();
    let cfg = ProjectionConfig { steps: 8, ..Default::default() };
    let keys = [0, 1, 2, 3];
    let a = project_many(Exec::Sequential, &imgs, &keys, &b, &s, &cfg).unwrap();
    let c = project_many(Exec::Parallel, &imgs, &keys, &b, &s, &cfg).unwrap();
    for (x, y) in a.iter().zip(&c) {
        assert_eq!(x.w_star, y.w_star);
        assert_eq!(x.loss_curve, y.loss_curve);
    }
}

#[test]
fn rejects_bad_inputs() {
    let (b, s) = setup();
    let small = Image::new(16, 16, 3);
    assert!(matches!(
        project(&small, &b, &s, &ProjectionConfig::default()),
        Err(Error::Shape { .. })
    ));
    let (_, x) = synth(&b, 1);
    let cfg = ProjectionConfig { steps: 0, ..Default::default() };
    assert!(matches!(project(&x, &b, &s, &cfg), Err(Error::Param { .. })));
    let wp = LatentW::w_plus(vec![0.0; NUM_BLOCKS * W_DIM]).unwrap();
    let cfg = ProjectionConfig { init: Init::Provided { w: wp }, ..Default::default() };
    assert!(project(&x, &b, &s, &cfg).is_err());
}

#[test]
fn mean_image_is_pixelwise_average() {
    let a = Image::filled(SIZE, SIZE, [0.0, 0.5, 1.0]);
    let c = Image::filled(SIZE, SIZE, [1.0, 0.5, 0.0]);
    let m = mean_image_baseline(&[a.clone(), c]).unwrap();
    assert!(m.data().iter().all(|&v| v.abs() < 1e-6));
    // [0, 1] scale 0 maps to -1 on the model scale.
    assert!((model_mse(&a, &m) - 2.0 / 3.0).abs() < 1e-6);
}

#[test]
fn batch_project_writes_table_and_resumes() {
    let (b, s) = setup();
    let dir = tempfile::tempdir().unwrap();
    let data: Dataset = make_target_dataset(10, 0).unwrap().select(&(0..10).collect::<Vec<_>>());
    data.save(dir.path()).unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let table = dir.path().join("latents.jsonl");
    let cfg = ProjectionConfig { steps: 3, ..Default::default() };
    let r1 = batch_project(Exec::Sequential, &manifest, &table, &b, &s, &cfg).unwrap();
    assert_eq!((r1.projected, r1.skipped), (10, 0));
    let rows = load_latent_table(&table).unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0].sample_id, data.manifest.records[0].id);
    let r2 = batch_project(Exec::Sequential, &manifest, &table, &b, &s, &cfg).unwrap();
    assert_eq!((r2.projected, r2.skipped), (0, 10));
    assert_eq!(load_latent_table(&table).unwrap().len(), 10);
}

#[test]
fn batch_project_reports_missing_files() {
    let (b, s) = setup();
    let dir = tempfile::tempdir().unwrap();
    let data = make_target_dataset(10, 1).unwrap().select(&[0, 1, 2]);
    data.save(dir.path()).unwrap();
    let missing = dir.path().join(&data.manifest.records[1].path);
    std::fs::remove_file(&missing).unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let table = dir.path().join("latents.jsonl");
    let cfg = ProjectionConfig { steps: 2, ..Default::default() };
    let r = batch_project(Exec::Sequential, &manifest, &table, &b, &s, &cfg).unwrap();
    assert_eq!(r.projected, 2);
    assert_eq!(r.failed.len(), 1);
    assert_eq!(r.failed[0].0, data.manifest.records[1].id);

    for rec in &data.manifest.records {
        let _ = std::fs::remove_file(dir.path().join(&rec.path));
    }
    let table2 = dir.path().join("fresh.jsonl");
    assert!(batch_project(Exec::Sequential, &manifest, &table2, &b, &s, &cfg).is_err());
}

#[test]
fn latent_record_round_trips_and_averages_w_plus() {
    let mut w = vec![0f32; NUM_BLOCKS * W_DIM];
    for (i, v) in w.iter_mut().enumerate() {
        *v = (i / W_DIM) as f32;
    }
    let rec = LatentRecord { sample_id: "a".into(), space: Space::WPlus, w, final_mse: 0.1, best_step: 3 };
    let line = serde_json::to_string(&rec).unwrap();
    assert_eq!(serde_json::from_str::<LatentRecord>(&line).unwrap(), rec);
    assert!(rec.w_vector().iter().all(|&v| (v - 1.5).abs() < 1e-6));
}
