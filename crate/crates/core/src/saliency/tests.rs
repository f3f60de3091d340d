use proptest::prelude::*;

use super::*;
use crate::evalhost::ClassifierBundle;
use crate::scenegen::{make_target_dataset, target_labels};

#[test]
fn hand_computed_two_channel_example() {
    // A₁ = [[1,0],[0,1]], A₂ = [[0,2],[0,0]]; ∂/∂A₁ = 1, ∂/∂A₂ = −1.
    let acts = [1.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0];
    let grads = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
    let m = gradcam_from(&acts, &grads, [2, 2, 2], 0, (2, 2)).unwrap();
    assert_eq!(m.raw, vec![1.0, 0.0, 0.0, 1.0]);
    // Same-size upsampling is the identity.
    assert_eq!(m.upsampled, m.raw);
}

#[test]
fn zero_gradients_give_a_zero_map() {
    let acts: Vec<f64> = (0..64).map(|i| i as f64).collect();
    let m = gradcam_from(&acts, &[0.0; 64], [4, 4, 4], 1, (32, 32)).unwrap();
    assert!(m.raw.iter().all(|&v| v == 0.0));
    assert!(m.upsampled.iter().all(|&v| v == 0.0));
    assert!(m.normalized().iter().all(|&v| v == 0.0));
}

#[test]
fn non_finite_gradients_are_rejected() {
    let mut g = vec![0.5; 8];
    g[3] = f64::NAN;
    assert!(matches!(
        gradcam_from(&[1.0; 8], &g, [2, 2, 2], 0, (4, 4)),
        Err(crate::Error::NonFinite { .. })
    ));
    assert!(gradcam_from(&[1.0; 7], &[1.0; 8], [2, 2, 2], 0, (4, 4)).is_err());
}

#[test]
fn upsampling_interpolates_between_cell_centres() {
    let up = upsample_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
    assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
}

proptest! {
    #[test]
    fn maps_are_non_negative_and_scale_with_the_gradient(
        acts in prop::collection::vec(0.0f64..3.0, 3 * 16),
        grads in prop::collection::vec(-1.0f64..1.0, 3 * 16),
    ) {
        let m = gradcam_from(&acts, &grads, [3, 4, 4], 0, (32, 32)).unwrap();
        prop_assert!(m.raw.iter().chain(&m.upsampled).all(|&v| v >= 0.0));
        let doubled: Vec<f64> = grads.iter().map(|g| 2.0 * g).collect();
        let m2 = gradcam_from(&acts, &doubled, [3, 4, 4], 0, (32, 32)).unwrap();
        for (a, b) in m.raw.iter().zip(&m2.raw) {
            prop_assert_eq!(2.0 * a, *b);
        }
        prop_assert_eq!(m.normalized(), m2.normalized());
    }

    #[test]
    fn upsampled_maximum_stays_near_a_dominant_peak(
        mut raw in prop::collection::vec(0.0f64..0.5, 16),
        peak in 0usize..16,
    ) {
        // Pixels next to the peak carry at least (15/16)² of it; pixels whose
        // interpolation support excludes the peak stay below 0.5.
        raw[peak] = 1.0;
        let up = upsample_bilinear(&raw, 4, 4, 32, 32);
        let argmax = |v: &[f64]| v.iter().enumerate().fold((0, f64::MIN), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0;
        let (ry, rx) = (argmax(&raw) / 4, argmax(&raw) % 4);
        let u = argmax(&up);
        let (uy, ux) = (u / 32 / 8, u % 32 / 8);
        prop_assert!(ry.abs_diff(uy) <= 1 && rx.abs_diff(ux) <= 1, "raw ({ry},{rx}) up cell ({uy},{ux})");
        prop_assert!(up.iter().all(|&v| v <= raw[argmax(&raw)] + 1e-12));
    }
}

fn bundle() -> ClassifierBundle {
    ClassifierBundle::untrained(target_labels(), 3).unwrap()
}

#[test]
fn classifier_maps_are_4x4_upsampled_to_32x32() {
    let data = make_target_dataset(10, 1).unwrap();
    let b = bundle();
    let maps = gradcam_batch(crate::par::Exec::default(), &b, &data.images[..6], &[0, 1, 2, 3, 4, 5]).unwrap();
    for (i, m) in maps.iter().enumerate() {
        assert_eq!((m.raw_height, m.raw_width, m.raw.len()), (4, 4, 16));
        assert_eq!((m.height, m.width, m.upsampled.len()), (32, 32, 1024));
        assert_eq!(m.class_idx, i);
        assert!(m.raw.iter().all(|&v| v >= 0.0));
    }
    assert!(gradcam(&b, &data.images[0], 10).is_err());
}

#[test]
fn scaling_the_class_logit_scales_the_raw_map() {
    let data = make_target_dataset(10, 2).unwrap();
    let b = bundle();
    let mut scaled = b.clone();
    let cls = 4;
    let k = b.num_classes();
    let w = scaled.params.get_mut("cls.fc.w").unwrap();
    let cols = w.dim(1);
    for v in &mut w.data_mut()[cls * cols..(cls + 1) * cols] {
        *v *= 2.0;
    }
    scaled.params.get_mut("cls.fc.b").unwrap().data_mut()[cls] *= 2.0;
    assert_eq!(k, 10);
    for img in data.images.iter().take(5) {
        let a = gradcam(&b, img, cls).unwrap();
        let s = gradcam(&scaled, img, cls).unwrap();
        for (x, y) in a.raw.iter().zip(&s.raw) {
            assert_eq!(2.0 * x, *y);
        }
        assert_eq!(a.normalized(), s.normalized());
    }
}

#[test]
fn overlay_of_a_zero_map_is_the_input() {
    let data = make_target_dataset(10, 3).unwrap();
    let img = &data.images[0];
    assert_eq!(&overlay(&[0.0; 1024], img).unwrap(), img);
    let ramp: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
    let a = overlay(&ramp, img).unwrap();
    assert_eq!(a, overlay(&ramp, img).unwrap());
    assert_eq!((a.height, a.width, a.channels), (img.height, img.width, img.channels));
    assert_ne!(&a, img);
    assert!(overlay(&[0.0; 10], img).is_err());
}

#[test]
fn on_object_fraction_cases() {
    let mut mask = Mask { height: 32, width: 32, data: vec![false; 1024] };
    for y in 0..16 {
        for x in 0..16 {
            mask.data[y * 32 + x] = true;
        }
    }
    let uniform = vec![0.3; 1024];
    assert!((on_object_fraction(&uniform, &mask).unwrap() - 0.25).abs() < 1e-12);
    let inside: Vec<f64> = mask.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    assert_eq!(on_object_fraction(&inside, &mask).unwrap(), 1.0);
    let outside: Vec<f64> = inside.iter().map(|v| 1.0 - v).collect();
    assert_eq!(on_object_fraction(&outside, &mask).unwrap(), 0.0);
    assert_eq!(on_object_fraction(&[0.0; 1024], &mask).unwrap(), 0.0);
    assert!(on_object_fraction(&[0.0; 100], &mask).is_err());
}
