//! Short end-to-end chain: render, train, project, augment.

use dapper_core::augmenter::{build_mix, AugmentKind, AugmentPolicy, MixSpec, Synthesizer};
use dapper_core::inversion::{batch_project, load_latent_table, ProjectionConfig};
use dapper_core::par::Exec;
use dapper_core::scenegen::{make_source_dataset, make_target_dataset, Dataset, Provenance};
use dapper_core::stylegan::{train_gan, GanConfig};

#[test]
fn render_train_project_augment() {
    let dir = tempfile::tempdir().unwrap();
    let source = make_source_dataset(1000, 1).unwrap();
    let gan = train_gan(&source, &GanConfig { steps: 4, batch: 8, seed: 2, ..Default::default() }).unwrap();
    let stats = gan.bundle.estimate_w_stats(10_000, 3).unwrap();

    let target = make_target_dataset(10, 4).unwrap();
    let data_dir = dir.path().join("target");
    target.save(&data_dir).unwrap();
    let manifest = data_dir.join("manifest.jsonl");
    let table = dir.path().join("latents.jsonl");
    let cfg = ProjectionConfig { steps: 3, seed: 5, ..Default::default() };
    let first = batch_project(Exec::default(), &manifest, &table, &gan.bundle, &stats, &cfg).unwrap();
    assert_eq!((first.projected, first.skipped), (100, 0));
    assert!(first.failed.is_empty());
    let again = batch_project(Exec::default(), &manifest, &table, &gan.bundle, &stats, &cfg).unwrap();
    assert_eq!((again.projected, again.skipped), (0, 100));

    let latents = load_latent_table(&table).unwrap();
    assert_eq!(latents.len(), 100);
    let reloaded = Dataset::load(&manifest).unwrap();
    // PNG stores 8 bits per channel.
    for (a, b) in reloaded.images.iter().zip(&target.images) {
        let err = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6, "{err}");
    }

    let synth = Synthesizer { bundle: &gan.bundle, stats: &stats, direction: None };
    let spec = MixSpec {
        real_fraction: 0.7,
        policy: AugmentPolicy { seed: 6, ..AugmentPolicy::of_kind(AugmentKind::Perturb) },
        ..Default::default()
    };
    let mix = build_mix(Exec::default(), &reloaded, &spec, &latents, Some(&synth)).unwrap();
    let real = mix.manifest.records.iter().filter(|r| r.provenance == Provenance::Real).count();
    let synthetic = mix.manifest.records.iter().filter(|r| r.provenance == Provenance::SyntheticPerturb).count();
    assert_eq!(real, 70);
    assert_eq!(synthetic, 70 * spec.policy.k);
    assert_eq!(mix.len(), real + synthetic);
    // Synthetic samples keep the label of the real image they came from.
    for r in mix.manifest.records.iter().filter(|r| r.source.is_some()) {
        let src = reloaded.manifest.records.iter().find(|s| Some(&s.id) == r.source.as_ref()).unwrap();
        assert_eq!(src.label, r.label);
    }
}
