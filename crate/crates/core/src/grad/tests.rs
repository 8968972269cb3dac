use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

type F = f64;

#[test]
fn leaf_keeps_values() {
    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
    assert_eq!(tape.value(x), &[1.0, 2.0, 3.0]);
}

#[test]
fn leaf_rejects_nan() {
    let mut tape = Tape::<F>::new();
    assert_eq!(
        tape.leaf(vec![F::NAN], &[1], true),
        Err(GradError::NonFinite { index: 0 })
    );
}

#[test]
fn unused_leaf_gets_zero_adjoint() {
    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    let y = tape.leaf(vec![4.0], &[1], true).unwrap();
    let loss = tape.sum(y).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 0.0]);
    assert_eq!(g.get(y).unwrap(), &[1.0]);
}

#[test]
fn analytic_derivative_anchors() {
    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![3.0], &[], true).unwrap();
    let sq = tape.mul(x, x).unwrap();
    assert_eq!(tape.backward(sq).unwrap().get(x).unwrap(), &[6.0]);

    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![0.0], &[], true).unwrap();
    let s = tape.sigmoid(x).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[0.25]);

    for (at, expect) in [(0.5, 1.0), (2.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let mut tape = Tape::<F>::new();
        let x = tape.leaf(vec![at], &[], true).unwrap();
        let c = tape.clamp(x, 0.0, 1.0).unwrap();
        assert_eq!(tape.backward(c).unwrap().get(x).unwrap(), &[expect], "clamp at {at}");
    }

    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![0.0], &[], true).unwrap();
    let a = tape.abs(x).unwrap();
    assert_eq!(tape.backward(a).unwrap().get(x).unwrap(), &[0.0]);
}

#[test]
fn sum_and_mean_adjoints() {
    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![1.0; 5], &[5], true).unwrap();
    let s = tape.sum(x).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(x).unwrap(), &[1.0; 5]);

    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![2.0, -1.0, 0.5, 7.0], &[4], true).unwrap();
    let m = tape.mean(x).unwrap();
    assert_eq!(tape.backward(m).unwrap().get(x).unwrap(), &[0.25; 4]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<F>::new();
    let x = tape.leaf(vec![1.0, 2.0], &[2], true).unwrap();
    assert!(matches!(tape.backward(x), Err(GradError::NonScalarLoss { .. })));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut tape = Tape::<F>::new();
    let a = tape.leaf(vec![0.0; 6], &[2, 3], false).unwrap();
    let b = tape.leaf(vec![0.0; 2], &[2], false).unwrap();
    assert!(matches!(tape.add(a, b), Err(GradError::ShapeMismatch { .. })));
    let c = tape.leaf(vec![0.0; 2], &[2, 1], false).unwrap();
    let s = tape.add(a, c).unwrap();
    assert_eq!(tape.shape(s), &[2, 3]);
}

#[test]
fn foreign_node_rejected() {
    let mut a = Tape::<F>::new();
    let mut b = Tape::<F>::new();
    let x = a.leaf(vec![1.0], &[1], true).unwrap();
    assert_eq!(b.neg(x), Err(GradError::ForeignNode));
}

#[test]
fn division_guard_keeps_sign_and_counts() {
    let mut tape = Tape::<F>::new();
    let a = tape.leaf(vec![1.0, 1.0, 1.0], &[3], false).unwrap();
    let b = tape.leaf(vec![0.0, -1e-15, 2.0], &[3], false).unwrap();
    let q = tape.div(a, b).unwrap();
    assert_eq!(tape.value(q), &[1e12, -1e12, 0.5]);
    assert_eq!(tape.guard_events(), 2);
}

#[test]
fn structural_ops_forward() {
    let mut tape = Tape::<F>::new();
    let x = tape.leaf((0..6).map(F::from).collect(), &[2, 3], true).unwrap();
    let cols = tape.select(x, 1, &[2, 0]).unwrap();
    assert_eq!(tape.value(cols), &[2.0, 0.0, 5.0, 3.0]);
    let rows = tape.select(x, 0, &[1, 1]).unwrap();
    assert_eq!(tape.value(rows), &[3.0, 4.0, 5.0, 3.0, 4.0, 5.0]);
    let sa = tape.sum_axis(x, 1, false).unwrap();
    assert_eq!(tape.value(sa), &[3.0, 12.0]);
    let sc = tape.scatter_add(x, &[2, 0], 3).unwrap();
    assert_eq!(tape.value(sc), &[3.0, 4.0, 5.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);
    let cat = tape.concat(&[x, cols], 1).unwrap();
    assert_eq!(tape.shape(cat), &[2, 5]);
    assert_eq!(tape.value(cat), &[0.0, 1.0, 2.0, 2.0, 0.0, 3.0, 4.0, 5.0, 5.0, 3.0]);
    let b = tape.leaf(vec![1.0, 2.0], &[2, 1], false).unwrap();
    let bb = tape.broadcast(b, &[2, 3]).unwrap();
    assert_eq!(tape.value(bb), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
}

type Builder = fn(&mut Tape<F>, Node) -> GradResult<Node>;

/// Each primitive wrapped as a scalar function of a 4-vector.
fn primitive_cases() -> Vec<(&'static str, Builder, (F, F))> {
    fn k(tape: &mut Tape<F>, len: usize, seed: F) -> Node {
        let vals = (0..len).map(|i| 0.3 + 0.17 * i as F + seed).collect();
        tape.constant(vals, &[len]).unwrap()
    }
    vec![
        ("add", |t, x| { let c = k(t, 4, 0.1); let y = t.add(x, c)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("sub", |t, x| { let c = k(t, 4, 0.2); let y = t.sub(c, x)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("mul", |t, x| { let y = t.mul(x, x)?; let z = t.mul(y, x)?; t.sum(z) }, (-2.0, 2.0)),
        ("div", |t, x| { let c = k(t, 4, 0.0); let y = t.div(c, x)?; t.sum(y) }, (0.5, 2.0)),
        ("neg", |t, x| { let y = t.neg(x)?; let y = t.mul(y, x)?; t.sum(y) }, (-2.0, 2.0)),
        ("abs", |t, x| { let y = t.abs(x)?; let y = t.mul(y, x)?; t.sum(y) }, (0.2, 2.0)),
        ("sqrt", |t, x| { let y = t.sqrt(x)?; t.sum(y) }, (0.2, 3.0)),
        ("square", |t, x| { let y = t.square(x)?; t.sum(y) }, (-2.0, 2.0)),
        ("sin", |t, x| { let y = t.sin(x)?; t.sum(y) }, (-3.0, 3.0)),
        ("cos", |t, x| { let y = t.cos(x)?; t.sum(y) }, (-3.0, 3.0)),
        ("tanh", |t, x| { let y = t.tanh(x)?; t.sum(y) }, (-2.0, 2.0)),
        ("sigmoid", |t, x| { let y = t.sigmoid(x)?; t.sum(y) }, (-4.0, 4.0)),
        ("log_sigmoid", |t, x| { let y = t.log_sigmoid(x)?; t.sum(y) }, (-4.0, 4.0)),
        ("exp", |t, x| { let y = t.exp(x)?; t.sum(y) }, (-2.0, 2.0)),
        ("ln", |t, x| { let y = t.ln(x)?; t.sum(y) }, (0.3, 3.0)),
        ("clamp", |t, x| { let y = t.clamp(x, -0.5, 0.5)?; let y = t.square(y)?; t.sum(y) }, (-1.0, 1.0)),
        ("min2", |t, x| { let c = k(t, 4, -0.4); let y = t.min2(x, c)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("max2", |t, x| { let c = k(t, 4, -0.4); let y = t.max2(x, c)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("mean", |t, x| { let y = t.square(x)?; t.mean(y) }, (-2.0, 2.0)),
        ("sum_axis", |t, x| { let y = t.reshape(x, &[2, 2])?; let s = t.sum_axis(y, 0, false)?; let s = t.square(s)?; t.sum(s) }, (-2.0, 2.0)),
        ("select", |t, x| { let y = t.select(x, 0, &[3, 0, 3, 1])?; let w = k(t, 4, 0.5); let y = t.mul(y, w)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("scatter_add", |t, x| { let y = t.scatter_add(x, &[1, 1, 0, 2], 3)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("concat", |t, x| { let y = t.concat(&[x, x], 0)?; let w = k(t, 8, 0.1); let y = t.mul(y, w)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
        ("broadcast", |t, x| { let y = t.broadcast(x, &[3, 4])?; let w = k(t, 12, 0.1); let w = t.reshape(w, &[3, 4])?; let y = t.mul(y, w)?; let y = t.square(y)?; t.sum(y) }, (-2.0, 2.0)),
    ]
}

fn near_kink(name: &str, x: &[F]) -> bool {
    let c: Vec<F> = (0..4).map(|i| 0.3 + 0.17 * i as F - 0.4).collect();
    match name {
        "clamp" => x.iter().any(|v| (v.abs() - 0.5).abs() < 1e-3),
        "min2" | "max2" => x.iter().zip(&c).any(|(a, b)| (a - b).abs() < 1e-3),
        _ => false,
    }
}

#[test]
fn every_primitive_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (name, f, (lo, hi)) in primitive_cases() {
        let mut checked = 0;
        while checked < 100 {
            let x: Vec<F> = (0..4).map(|_| rng.gen_range(lo..hi)).collect();
            if near_kink(name, &x) {
                continue;
            }
            let r = grad_check(f, &x, &[4], 1e-5).unwrap();
            assert!(r.max_rel_error <= 1e-6, "{name}: {} at {x:?}", r.max_rel_error);
            checked += 1;
        }
    }
}

#[test]
fn grad_check_reports_small_error_for_smooth_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<F> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = grad_check(|t, x| { let y = t.square(x)?; t.sum(y) }, &x, &[6], 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-8);
    let r = grad_check(|t, x| { let y = t.sigmoid(x)?; t.sum(y) }, &x, &[6], 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-6);
}

#[test]
fn grad_check_can_exclude_kink_coordinates() {
    // coordinate 1 sits exactly on the clamp boundary
    let x = [0.2, 1.0, -0.3];
    let f = |t: &mut Tape<F>, x: Node| {
        let y = t.clamp(x, -1.0, 1.0)?;
        t.sum(y)
    };
    let full = grad_check(f, &x, &[3], 1e-5).unwrap();
    assert!(full.max_rel_error > 0.4);
    let r = grad_check_excluding(f, &x, &[3], 1e-5, &[1]).unwrap();
    assert!(r.max_rel_error < 1e-9);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x0 = vec![0.3, -1.2, 2.0];
    let (a, b) = (1.7, -0.4);
    let build_f = |t: &mut Tape<F>, x: Node| -> GradResult<Node> {
        let s = t.sin(x)?;
        let p = t.mul(s, x)?;
        t.sum(p)
    };
    let build_g = |t: &mut Tape<F>, x: Node| -> GradResult<Node> {
        let q = t.square(x)?;
        let e = t.tanh(q)?;
        t.mean(e)
    };
    let grad_of = |combo: &dyn Fn(&mut Tape<F>, Node) -> GradResult<Node>| {
        let mut t = Tape::new();
        let x = t.leaf(x0.clone(), &[3], true).unwrap();
        let l = combo(&mut t, x).unwrap();
        t.backward(l).unwrap().get(x).unwrap().to_vec()
    };
    let gf = grad_of(&build_f);
    let gg = grad_of(&build_g);
    let gc = grad_of(&|t, x| {
        let f = build_f(t, x)?;
        let g = build_g(t, x)?;
        let f = t.scale(f, a)?;
        let g = t.scale(g, b)?;
        t.add(f, g)
    });
    for i in 0..3 {
        assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() <= 1e-12);
    }
}

#[test]
fn backward_twice_is_bit_identical_and_replay_reproduces_values() {
    let mut t = Tape::<F>::new();
    let x = t.leaf(vec![0.1, 0.7, -0.4, 1.3], &[4], true).unwrap();
    let w = t.constant(vec![0.5, 0.25], &[2]).unwrap();
    let r = t.reshape(x, &[2, 2]).unwrap();
    let y = t.mul(r, w).unwrap();
    let y = t.sigmoid(y).unwrap();
    let z = t.sum_axis(y, 1, true).unwrap();
    let z = t.log_sigmoid(z).unwrap();
    let l = t.mean(z).unwrap();
    let g1 = t.backward(l).unwrap();
    let g2 = t.backward(l).unwrap();
    assert_eq!(g1, g2);
    let replayed = t.replay();
    for (i, v) in replayed.iter().enumerate() {
        let n = [x, w, r, y, z, l].into_iter().find(|n| n.index() == i);
        if let Some(n) = n {
            assert_eq!(v.as_slice(), t.value(n));
        }
    }
    assert_eq!(replayed.len(), t.len());
}

#[test]
fn adjoint_shape_matches_primal() {
    let mut t = Tape::<F>::new();
    let x = t.leaf(vec![1.0; 12], &[3, 4], true).unwrap();
    let s = t.sum(x).unwrap();
    assert_eq!(t.backward(s).unwrap().get(x).unwrap().len(), 12);
}

struct Doubler;

impl CustomOp<F> for Doubler {
    fn name(&self) -> &str {
        "doubler"
    }
    fn output_shape(&self, shapes: &[&[usize]]) -> GradResult<Vec<usize>> {
        Ok(shapes[0].to_vec())
    }
    fn forward(&self, inputs: &[&[F]]) -> Vec<F> {
        inputs[0].iter().map(|v| 2.0 * v).collect()
    }
    fn backward(&self, _: &[&[F]], _: &[F], g: &[F]) -> Vec<Vec<F>> {
        vec![g.iter().map(|v| 2.0 * v).collect()]
    }
}

#[test]
fn custom_op_participates_in_backward() {
    let r = grad_check(
        |t, x| {
            let y = t.custom(&[x], std::sync::Arc::new(Doubler))?;
            let y = t.square(y)?;
            t.sum(y)
        },
        &[0.5, -1.0],
        &[2],
        1e-5,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-8);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn mul_adjoint_is_other_operand(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let mut t = Tape::<F>::new();
            let x = t.leaf(vec![a], &[], true).unwrap();
            let y = t.leaf(vec![b], &[], true).unwrap();
            let p = t.mul(x, y).unwrap();
            let g = t.backward(p).unwrap();
            prop_assert_eq!(g.get(x).unwrap()[0], b);
            prop_assert_eq!(g.get(y).unwrap()[0], a);
        }

        #[test]
        fn broadcast_adjoint_sums_to_count(v in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let mut t = Tape::<F>::new();
            let x = t.leaf(v, &[3], true).unwrap();
            let b = t.broadcast(x, &[4, 3]).unwrap();
            let s = t.sum(b).unwrap();
            let g = t.backward(s).unwrap();
            prop_assert_eq!(g.get(x).unwrap(), &[4.0, 4.0, 4.0][..]);
        }
    }
}
