use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces an op output to a scalar with fixed random weights so every
/// output coordinate contributes to the checked gradient.
fn weighted_sum<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> crate::Result<Var<'g, f64>> {
    let shape = y.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = g.constant(rand_tensor(&mut rng, &shape).reshaped(shape.clone()).unwrap())?;
    y.mul(w)?.sum()
}

#[test]
fn matmul_identity_and_hand_values() {
    let g = Graph::<f64>::new();
    let eye = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    let x = g.constant(Tensor::matrix(2, 2, vec![5.0, -1.0, 2.0, 3.5]).unwrap()).unwrap();
    assert_eq!(eye.matmul(x).unwrap().to_tensor(), x.to_tensor());

    let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let b = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
    let y = a.matmul(b).unwrap();
    assert_eq!(y.shape(), vec![2, 1]);
    assert_eq!(y.to_tensor().data(), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[4, 2])).unwrap();
    match a.matmul(b) {
        Err(Error::Dimension(msg)) => {
            assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&mut rng, &[3, 4]);
    let b = rand_tensor(&mut rng, &[4, 2]);
    let r = finite_diff_check(|g, v| weighted_sum(g, v[0].matmul(v[1])?, 1), &[a, b], 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn pointwise_analytic_values() {
    let g = Graph::<f64>::new();
    let z = g.constant(Tensor::scalar(0.0)).unwrap();
    assert_eq!(z.sigmoid().unwrap().item(), 0.5);

    let x = g.param(&Tensor::scalar(-3.0)).unwrap();
    let r = x.relu().unwrap();
    assert_eq!(r.item(), 0.0);
    r.backward().unwrap();
    assert_eq!(x.grad().unwrap().item(), 0.0);
}

#[test]
fn tanh_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&mut rng, &[5]);
    let r = finite_diff_check(|g, v| weighted_sum(g, v[0].tanh()?, 2), &[x], 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn binary_ops_reject_broadcast_beyond_scalars() {
    let g = Graph::<f32>::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[3])).unwrap();
    assert!(matches!(a.add(b), Err(Error::Dimension(_))));
    let s = g.scalar(2.0).unwrap();
    assert_eq!(a.add(s).unwrap().shape(), vec![2, 3]);
}

#[test]
fn softmax_values_and_stability() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0])).unwrap();
    for &p in x.softmax().unwrap().to_tensor().data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let big = g.constant(Tensor::vector(vec![1000.0, 0.0])).unwrap();
    assert_eq!(big.softmax().unwrap().to_tensor().data(), &[1.0, 0.0]);
}

#[test]
fn softmax_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[4]);
    let r = finite_diff_check(|g, v| weighted_sum(g, v[0].softmax()?, 3), &[x], 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn cosine_identity_orthogonality_and_scale() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::vector(vec![0.3, -2.0, 1.1])).unwrap();
    assert!((x.cosine(x).unwrap().item() - 1.0).abs() < 1e-15);
    let e1 = g.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
    let e2 = g.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
    assert_eq!(e1.cosine(e2).unwrap().item(), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = rand_tensor(&mut rng, &[6]);
    let v = rand_tensor(&mut rng, &[6]);
    let c = cosine(u.data(), v.data()).unwrap();
    let c2 = cosine(u.map(|x| 2.0 * x).data(), v.map(|x| 3.0 * x).data()).unwrap();
    assert!((c - c2).abs() < 1e-6);
}

#[test]
fn cosine_degenerate_inputs() {
    let g = Graph::<f64>::new();
    let z = g.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
    assert!(matches!(z.cosine(z), Err(Error::Degenerate(_))));
    // One zero vector is fine: the clamped norm gives similarity 0.
    let x = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert_eq!(x.cosine(z).unwrap().item(), 0.0);
}

#[test]
fn hinge_examples() {
    let g = Graph::<f64>::new();
    let s = |v: f64| g.param(&Tensor::scalar(v)).unwrap();
    assert_eq!(g.hinge(s(0.5), s(0.9), 0.2).unwrap().item(), 0.0);
    assert!((g.hinge(s(0.5), s(0.4), 0.2).unwrap().item() - 0.3).abs() < 1e-12);
    assert!(matches!(g.hinge(s(0.5), s(0.4), -0.1), Err(Error::Config(_))));

    let (n, p) = (s(0.25), s(0.25));
    let h = g.hinge(n, p, 0.0).unwrap();
    assert_eq!(h.item(), 0.0);
    h.backward().unwrap();
    assert_eq!(n.grad().unwrap().item(), 0.0);
    assert_eq!(p.grad().unwrap().item(), 0.0);
}

#[test]
fn backward_of_sum_is_ones() {
    let g = Graph::<f32>::new();
    let x = g.param(&Tensor::matrix(2, 3, vec![1.0; 6]).unwrap()).unwrap();
    x.sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0; 6]);
}

#[test]
fn cosine_is_stationary_on_its_own_ray() {
    let u0 = Tensor::vector(vec![0.4, -1.3, 0.9, 2.2]);
    let r = finite_diff_check(|_, v| v[0].cosine(v[1]), &[u0.clone(), u0.clone()], 1e-5).unwrap();
    assert!(r.analytic.abs() < 1e-12 && r.numeric.abs() < 1e-9, "{r:?}");
    let g = Graph::<f64>::new();
    let u = g.param(&u0).unwrap();
    let v = g.constant(u0).unwrap();
    u.cosine(v).unwrap().backward().unwrap();
    assert!(u.grad().unwrap().data().iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn repeated_backward_accumulates() {
    let g = Graph::<f64>::new();
    let x = g.param(&Tensor::vector(vec![1.0, -2.0])).unwrap();
    let y = x.mul(x).unwrap().sum().unwrap();
    y.backward().unwrap();
    let once = x.grad().unwrap();
    y.backward().unwrap();
    let twice = x.grad().unwrap();
    for (a, b) in once.data().iter().zip(twice.data()) {
        assert_eq!(2.0 * a, *b);
    }
    g.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn backward_needs_scalar() {
    let g = Graph::<f32>::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0])).unwrap();
    assert!(matches!(x.tanh().unwrap().backward(), Err(Error::Dimension(_))));
}

#[test]
fn fan_out_sums_both_paths() {
    // y = sum(tanh(x)) + sum(3x): dy/dx = 1 - tanh² + 3
    let g = Graph::<f64>::new();
    let x = g.param(&Tensor::vector(vec![0.2, -0.7])).unwrap();
    let a = x.tanh().unwrap().sum().unwrap();
    let b = x.scale(3.0).unwrap().sum().unwrap();
    a.add(b).unwrap().backward().unwrap();
    let gx = x.grad().unwrap();
    for (i, &v) in [0.2f64, -0.7].iter().enumerate() {
        let expect = 1.0 - v.tanh().powi(2) + 3.0;
        assert!((gx.data()[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_values() {
    let g = Graph::<f64>::new();
    let l = g.constant(Tensor::vector(vec![0.0; 4])).unwrap();
    assert!((l.cross_entropy(2).unwrap().item() - 4f64.ln()).abs() < 1e-12);
    let peaked = g.constant(Tensor::vector(vec![0.0, 30.0, 0.0, 0.0])).unwrap();
    assert!(peaked.cross_entropy(1).unwrap().item() < 1e-9);
    assert!(matches!(l.cross_entropy(4), Err(Error::Data(_))));
}

#[test]
fn non_finite_values_are_reported_at_op_boundary() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::scalar(f64::MAX)).unwrap();
    match x.scale(10.0) {
        Err(Error::Numerical(msg)) => assert!(msg.contains("scale"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(g.leaf(Tensor::scalar(f64::NAN), true).is_err());
}

/// Random inputs for every differentiable op, checked in 64-bit mode.
fn check_all_ops(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut run = |params: Vec<Tensor<f64>>,
                   f: &dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> crate::Result<Var<'g, f64>>| {
        let r = finite_diff_check(|g, v| weighted_sum(g, f(g, v)?, seed), &params, 1e-5).unwrap();
        worst = worst.max(r.max_rel_error);
    };
    let m23 = rand_tensor(&mut rng, &[2, 3]);
    let m23b = rand_tensor(&mut rng, &[2, 3]);
    let m34 = rand_tensor(&mut rng, &[3, 4]);
    let v3 = rand_tensor(&mut rng, &[3]);
    let v3b = rand_tensor(&mut rng, &[3]);
    let s = rand_tensor(&mut rng, &[]);
    run(vec![m23.clone(), m34.clone()], &|_, v| v[0].matmul(v[1]));
    run(vec![v3.clone(), m34.clone()], &|_, v| v[0].matmul(v[1]));
    run(vec![m34.clone(), rand_tensor(&mut rng, &[4])], &|_, v| v[0].matmul(v[1]));
    run(vec![m23.clone(), m23b.clone()], &|_, v| v[0].add(v[1]));
    run(vec![m23.clone(), m23b.clone()], &|_, v| v[0].sub(v[1]));
    run(vec![m23.clone(), m23b.clone()], &|_, v| v[0].mul(v[1]));
    run(vec![m23.clone(), s.clone()], &|_, v| v[0].mul(v[1]));
    run(vec![s.clone(), m23.clone()], &|_, v| v[0].add(v[1]));
    run(vec![m23.clone()], &|_, v| v[0].scale(-1.7));
    run(vec![m23.clone(), v3.clone()], &|_, v| v[0].add_bias(v[1]));
    run(vec![m23.clone()], &|_, v| v[0].sigmoid());
    run(vec![m23.clone()], &|_, v| v[0].tanh());
    run(vec![m23.map(|x| if x.abs() < 1e-3 { 0.5 } else { x })], &|_, v| v[0].relu());
    run(vec![m23.clone(), m34.clone()], &|g, v| g.concat(&[v[1].slice(0, 3)?.reshape(&[3, 3])?.row(0)?.reshape(&[1, 3])?.add(v[0].row(1)?.reshape(&[1, 3])?)?, v[0].row(0)?.reshape(&[1, 3])?]));
    run(vec![v3.clone(), v3b.clone()], &|g, v| g.concat(&[v[0], v[1]]));
    run(vec![m34.clone()], &|_, v| v[0].sum_axis(0));
    run(vec![m34.clone()], &|_, v| v[0].mean_axis(1));
    run(vec![m34.clone()], &|_, v| v[0].mean());
    run(vec![v3.clone()], &|_, v| v[0].softmax());
    run(vec![m34.clone()], &|_, v| v[0].reshape(&[2, 6]));
    run(vec![m34.clone()], &|_, v| v[0].slice(1, 2));
    run(vec![m34.clone()], &|_, v| v[0].row(2));
    run(vec![m34.clone()], &|_, v| v[0].gather(&[2, 0, 2]));
    run(vec![v3.clone(), v3b.clone()], &|g, v| g.stack(&[v[0], v[1], v[0]]));
    run(vec![v3.clone(), v3b.clone()], &|_, v| v[0].cosine(v[1]));
    run(vec![rand_tensor(&mut rng, &[5])], &|_, v| v[0].cross_entropy(3));
    // Hinge and max are piecewise linear; keep inputs away from kinks.
    let (a, b) = (rng.random_range(-1.0..1.0f64), rng.random_range(-1.0..1.0f64));
    let alpha = if (0.4 + a - b).abs() < 1e-2 { 0.8 } else { 0.4 };
    run(vec![Tensor::scalar(a), Tensor::scalar(b)], &move |g, v| g.hinge(v[0], v[1], alpha));
    let xs: Vec<f64> = vec![0.1, 0.5, -0.3].into_iter().map(|x| x + a * 0.01).collect();
    run(xs.iter().map(|&x| Tensor::scalar(x)).collect(), &|g, v| g.max(v));
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, .. ProptestConfig::default() })]

    #[test]
    fn every_op_passes_gradient_check(seed in any::<u64>()) {
        let worst = check_all_ops(seed);
        prop_assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn softmax_sums_to_one_and_commutes_with_permutation(
        xs in prop::collection::vec(-20.0f64..20.0, 1..8),
        rot in 0usize..8,
    ) {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::vector(xs.clone())).unwrap();
        let y = x.softmax().unwrap().to_tensor();
        let total: f64 = y.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        prop_assert!(y.data().iter().all(|&p| p > 0.0));
        let k = rot % xs.len();
        let mut perm = xs.clone();
        perm.rotate_left(k);
        let yp = g.constant(Tensor::vector(perm)).unwrap().softmax().unwrap().to_tensor();
        let mut expect = y.data().to_vec();
        expect.rotate_left(k);
        for (a, b) in yp.data().iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_ignores_positive_scaling(
        u in prop::collection::vec(-5.0f64..5.0, 4),
        v in prop::collection::vec(-5.0f64..5.0, 4),
        a in 0.01f64..100.0,
        b in 0.01f64..100.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let c = cosine(&u, &v).unwrap();
        let us: Vec<f64> = u.iter().map(|x| a * x).collect();
        let vs: Vec<f64> = v.iter().map(|x| b * x).collect();
        prop_assert!((cosine(&us, &vs).unwrap() - c).abs() < 1e-6);
        prop_assert!(c.abs() <= 1.0 + 1e-6);
    }

    #[test]
    fn hinge_is_monotone(neg in -1.0f64..1.0, pos in -1.0f64..1.0, d in 0.0f64..0.5, alpha in 0.0f64..1.0) {
        let g = Graph::<f64>::new();
        let s = |v: f64| g.constant(Tensor::scalar(v)).unwrap();
        let base = g.hinge(s(neg), s(pos), alpha).unwrap().item();
        prop_assert!(g.hinge(s(neg + d), s(pos), alpha).unwrap().item() >= base);
        prop_assert!(g.hinge(s(neg), s(pos + d), alpha).unwrap().item() <= base);
    }
}
