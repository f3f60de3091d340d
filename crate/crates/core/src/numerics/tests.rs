use super::*;
use crate::error::Result;
use crate::seed;

fn store_with(entries: &[(&str, Array<f64>)]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (k, v) in entries {
        s.insert(*k, v.clone()).unwrap();
    }
    s
}

fn randn(shape: &[usize], seed_: u64) -> Array<f64> {
    Array::randn(shape, 1.0, &mut seed::rng(seed_))
}

fn check<F>(store: &ParamStore<f64>, f: F) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let r = grad_check(f, store, 1e-5, &GradCheckOptions::default()).unwrap();
    assert!(r.passed, "{r:#?}");
    r
}

#[test]
fn sum_of_squares_matches_analytic_gradient() {
    let mut s = ParamStore::<f32>::new();
    s.insert("x", Array::from_vec(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    let tape = Tape::new();
    let b = s.bind(&tape);
    let y = b.get("x").square().sum();
    let g = b.grads(&tape.backward(y));
    assert_eq!(g["x"].data(), &[2.0, 4.0]);
    let r = grad_check(
        |_, b: &Bound<'_, f32>| Ok(b.get("x").square().sum()),
        &s,
        1e-3,
        &GradCheckOptions { tolerance: 1e-4, ..Default::default() },
    )
    .unwrap();
    assert!(r.passed && r.max_rel_err() < 1e-4, "{r:?}");
}

#[test]
fn constant_function_has_zero_gradient() {
    let s = store_with(&[("x", randn(&[5], 1))]);
    let r = check(&s, |t, b| Ok(b.get("x").scale(0.0).sum().add(t.constant(Array::scalar(3.0)))));
    assert_eq!(r.max_rel_err(), 0.0);
}

fn perceptron_check<T: Real>(eps: f64, tolerance: f64) -> GradCheckReport {
    // Smooth activations; 64 sampled coordinates per array.
    let mut rng = seed::rng(11);
    let mut s = ParamStore::<T>::new();
    s.insert("w1", Array::randn(&[32, 16], 0.3, &mut rng)).unwrap();
    s.insert("b1", Array::randn(&[32], 0.1, &mut rng)).unwrap();
    s.insert("w2", Array::randn(&[4, 32], 0.3, &mut rng)).unwrap();
    s.insert("b2", Array::randn(&[4], 0.1, &mut rng)).unwrap();
    let x = Array::<T>::randn(&[8, 16], 1.0, &mut rng);
    grad_check(
        |t, b: &Bound<'_, T>| {
            let h = t.constant(x.clone()).linear(b.get("w1"), b.get("b1")).tanh();
            Ok(h.linear(b.get("w2"), b.get("b2")).softplus().mean())
        },
        &s,
        eps,
        &GradCheckOptions { max_coords: 64, tolerance, ..Default::default() },
    )
    .unwrap()
}

#[test]
fn two_layer_perceptron() {
    let r = perceptron_check::<f64>(1e-5, 1e-3);
    assert!(r.passed, "{r:#?}");
}

#[test]
fn two_layer_perceptron_single_precision_smoke() {
    // Central differences in f32 bottom out near 1e-3 from rounding alone.
    let r = perceptron_check::<f32>(1e-2, 1e-2);
    assert!(r.passed, "{r:#?}");
}

#[test]
fn elementwise_ops() {
    let s = store_with(&[("a", randn(&[3, 4], 2)), ("b", randn(&[3, 4], 3))]);
    check(&s, |_, b| {
        let (x, y) = (b.get("a"), b.get("b"));
        Ok(x.mul(y).add(x.tanh()).sub(y.softplus()).leaky_relu(0.2).square().mean())
    });
    check(&s, |_, b| {
        let x = b.get("a").square().add_scalar(0.5).powf(-0.5);
        Ok(x.scale(3.0).relu().sum())
    });
}

#[test]
fn matmul_all_transposes() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [4, 3] } else { [3, 4] };
        let b_shape = if tb { [5, 4] } else { [4, 5] };
        let s = store_with(&[("a", randn(&a_shape, 4)), ("b", randn(&b_shape, 5))]);
        let m = randn(&[3, 5], 6);
        check(&s, |_, b| Ok(b.get("a").matmul(b.get("b"), ta, tb).mul_const(&m).sum()));
    }
}

#[test]
fn matmul_matches_naive() {
    let tape = Tape::<f64>::new();
    let a = randn(&[3, 4], 7);
    let b = randn(&[4, 2], 8);
    let y = tape.constant(a.clone()).matmul(tape.constant(b.clone()), false, false);
    for i in 0..3 {
        for j in 0..2 {
            let want: f64 = (0..4).map(|k| a.data()[i * 4 + k] * b.data()[k * 2 + j]).sum();
            assert!((y.value().data()[i * 2 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_gradients() {
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
        let s = store_with(&[("x", randn(&[2, 3, 6, 6], 9)), ("w", randn(&[4, 3, k, k], 10))]);
        let ho = (6 + 2 * pad - k) / stride + 1;
        let m = randn(&[2, 4, ho, ho], 11);
        check(&s, |_, b| Ok(b.get("x").conv2d(b.get("w"), stride, pad).mul_const(&m).sum()));
    }
}

#[test]
fn conv2d_matches_direct_sum() {
    let x = randn(&[1, 2, 5, 5], 12);
    let w = randn(&[3, 2, 3, 3], 13);
    let tape = Tape::<f64>::new();
    let y = tape.constant(x.clone()).conv2d(tape.constant(w.clone()), 2, 1).value();
    assert_eq!(y.shape(), &[1, 3, 3, 3]);
    for o in 0..3 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut acc = 0.0;
                for c in 0..2 {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let iy = (oy * 2 + ki) as isize - 1;
                            let ix = (ox * 2 + kj) as isize - 1;
                            if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                acc += x.data()[(c * 5 + iy as usize) * 5 + ix as usize]
                                    * w.data()[((o * 2 + c) * 3 + ki) * 3 + kj];
                            }
                        }
                    }
                }
                assert!((y.data()[(o * 3 + oy) * 3 + ox] - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn structural_ops() {
    let s = store_with(&[
        ("x", randn(&[2, 3, 4, 4], 14)),
        ("b", randn(&[3], 15)),
        ("s", randn(&[2, 3], 16)),
        ("p", randn(&[2, 4, 5], 17)),
        ("c", randn(&[1, 3, 4, 4], 26)),
    ]);
    let m = randn(&[2, 3, 8, 8], 18);
    check(&s, |_, b| {
        Ok(b.get("x")
            .scale_channels(b.get("s"))
            .add_channel_bias(b.get("b"))
            .upsample2x()
            .mul_const(&m)
            .sum())
    });
    let m1 = randn(&[3, 3, 4, 4], 25);
    check(&s, |_, b| Ok(b.get("c").broadcast_rows(3).mul_const(&m1).sum()));
    let m2 = randn(&[2, 5], 19);
    check(&s, |_, b| Ok(b.get("p").select_axis1(2).mul_const(&m2).sum()));
    check(&s, |_, b| Ok(b.get("x").global_avg_pool().square().sum()));
    check(&s, |_, b| Ok(b.get("x").reshape(&[2, 3, 16]).sum_last().tanh().sum()));
    let t = randn(&[2, 3, 4, 4], 20);
    check(&s, |_, b| Ok(b.get("x").sub_const(&t).square().mean_per_row().sum()));
}

#[test]
fn cross_entropy_gradient_and_value() {
    let s = store_with(&[("z", randn(&[4, 5], 21))]);
    check(&s, |_, b| Ok(b.get("z").cross_entropy(&[0, 3, 4, 1])));
    let tape = Tape::<f64>::new();
    let z = tape.constant(Array::zeros(&[2, 4]));
    let l = z.cross_entropy(&[1, 2]).item();
    assert!((l - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn frozen_leaves_receive_no_gradient() {
    let mut s = store_with(&[("a", randn(&[3], 22)), ("b", randn(&[3], 23))]);
    s.set_trainable("b", false).unwrap();
    let tape = Tape::new();
    let bound = s.bind(&tape);
    let y = bound.get("a").mul(bound.get("b")).sum();
    let g = bound.grads(&tape.backward(y));
    assert!(g.contains_key("a") && !g.contains_key("b"));
}

#[test]
fn shared_variable_gradients_accumulate() {
    let s = store_with(&[("a", randn(&[4], 24))]);
    let r = check(&s, |_, b| {
        let a = b.get("a");
        Ok(a.mul(a).add(a).sum())
    });
    assert!(r.passed);
}
