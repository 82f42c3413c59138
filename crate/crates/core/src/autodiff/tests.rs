use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central finite differences of `f` at every element of every input.
fn finite_diff(inputs: &[Tensor], step: f64, f: &dyn Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut grads = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += step;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= step;
            grads.push((f(&plus) - f(&minus)) / (2.0 * step));
        }
        out.push(grads);
    }
    out
}

fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

#[test]
fn square_derivative() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = x * x;
    assert_eq!(g.grad_tensors(y, &[x]).unwrap()[0].item(), 6.0);
}

#[test]
fn cube_second_derivative() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let y = x * x * x;
    let dy = g.grad(y, &[x], true).unwrap()[0];
    assert!(dy.requires_grad());
    let d2y = g.grad(dy, &[x], false).unwrap()[0];
    assert_eq!(d2y.item(), 12.0);
}

#[test]
fn softshrink_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random_tensor(&mut rng, &[3, 4]);
    let z = random_tensor(&mut rng, &[4, 2]);
    let objective = |ts: &[Tensor]| {
        let g = Graph::new();
        let w = g.constant(ts[0].clone());
        let z = g.constant(ts[1].clone());
        w.matmul(z).softshrink(0.01).sum().item()
    };
    let g = Graph::new();
    let wv = g.param(w.clone());
    let zv = g.param(z.clone());
    let f = wv.matmul(zv).softshrink(0.01).sum();
    let grads = g.grad_tensors(f, &[wv, zv]).unwrap();
    let fd = finite_diff(&[w, z], 1e-5, &objective);
    for (analytic, numeric) in grads.iter().zip(&fd) {
        for (a, n) in analytic.data().iter().zip(numeric) {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }
    }
}

#[test]
fn elu_closed_forms() {
    let x = Tensor::from_vec(vec![0.0, 1.0, -1.0]);
    let y = elu(&x);
    assert_eq!(y.data()[0], 0.0);
    assert_eq!(y.data()[1], 1.0);
    assert!((y.data()[2] - (-1.0f64).exp_m1()).abs() < 1e-15);
    assert!((y.data()[2] + 0.63212).abs() < 1e-5);
}

#[test]
fn elu_slope_at_origin_is_one() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.0, -1.0]));
    let dx = g.grad_tensors(x.elu().sum(), &[x]).unwrap().remove(0);
    assert_eq!(dx.data()[0], 1.0);
    assert!((dx.data()[1] - (-1.0f64).exp()).abs() < 1e-15);
}

#[test]
fn softshrink_closed_forms_and_errors() {
    let x = Tensor::from_vec(vec![0.5, 0.005, -0.5]);
    let y = softshrink(&x, 0.01).unwrap();
    assert!((y.data()[0] - 0.49).abs() < 1e-15);
    assert_eq!(y.data()[1], 0.0);
    assert!((y.data()[2] + 0.49).abs() < 1e-15);
    assert_eq!(softshrink(&x, -0.1), Err(NegativeThreshold(-0.1)));
}

#[test]
fn softshrink_subgradient_convention() {
    let lambda = 0.01;
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.5, -0.5, 0.005, 0.0, lambda, -lambda]));
    let dx = g.grad_tensors(x.softshrink(lambda).sum(), &[x]).unwrap().remove(0);
    assert_eq!(dx.data(), &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn unreachable_leaf_has_zero_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let unused = g.param(Tensor::new(&[2, 2], vec![1.0; 4]));
    let later = g.param(Tensor::scalar(5.0));
    let y = x.square().sum();
    let grads = g.grad_tensors(y, &[unused, x, later]).unwrap();
    assert_eq!(grads[0], Tensor::zeros(&[2, 2]));
    assert_eq!(grads[1].data(), &[2.0, 4.0]);
    assert_eq!(grads[2], Tensor::zeros(&[1]));
}

#[test]
fn non_scalar_objective_rejected() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let err = g.grad(x.scale(2.0), &[x], false).unwrap_err();
    assert_eq!(err, AutodiffError::NonScalarObjective { shape: vec![2] });
}

#[test]
fn non_finite_backward_is_an_error() {
    let g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![0.0, 1.0]));
    let y = x.powf(0.5).sum();
    assert!(matches!(
        g.grad(y, &[x], false),
        Err(AutodiffError::NonFinite { .. })
    ));
}

#[test]
fn gradient_with_respect_to_intermediate_node() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let h = x.scale(2.0);
    let y = h * h + x;
    // ∂y/∂h holding x fixed = 2h = 12.
    assert_eq!(g.grad_tensors(y, &[h]).unwrap()[0].item(), 12.0);
    // total derivative dy/dx = 8x + 1 = 25.
    assert_eq!(g.grad_tensors(y, &[x]).unwrap()[0].item(), 25.0);
}

#[test]
fn gradient_without_create_graph_is_constant() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let dy = g.grad(x * x, &[x], false).unwrap()[0];
    assert!(!dy.requires_grad());
}

#[test]
fn softmax_and_log_softmax_are_consistent() {
    let g = Graph::new();
    let x = g.param(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 500.0]));
    let s = x.softmax(1).value();
    let ls = x.log_softmax(1).value();
    for (a, b) in s.data().iter().zip(ls.data()) {
        assert!((a.ln() - b).abs() < 1e-12 || *a == 0.0);
    }
    let cols = x.softmax(0).value();
    for j in 0..3 {
        assert!((cols.at(0, j) + cols.at(1, j) - 1.0).abs() < 1e-15);
    }
}

/// Builds a scalar from every supported primitive.
fn composite<'g>(g: &'g Graph, a: Var<'g>, b: Var<'g>, c: Var<'g>, s: Var<'g>) -> Var<'g> {
    // a: [3,4], b: [4,2], c: [3,2], s: [1]
    let m = a.matmul(b); // [3,2]
    let e = (m * c + c.scale(0.5)).elu();
    let sm = e.softmax(0) + e.softmax(1).scale(0.3);
    let bias = b.rows(0, 1).reshape(&[2]).broadcast_to(&[3, 2]);
    let prod = (sm * bias).mul_scalar(s).add_scalar(s.square());
    let shrunk = (prod - c).softshrink(0.05);
    let cat = g.concat(&[shrunk, a.matmul_t(b, false, false).t().t()]); // [6,2]
    let resampled = cat.resample(17).reshape(&[17, 1]);
    let div = resampled / (resampled.square().add_const(1.0));
    let logs = (c.square().add_const(0.5)).ln().sum_axis(1); // [3,1]
    let gathered = a.gather(
        std::rc::Rc::from(vec![0usize, 5, 5, 11, 2]),
        &[5],
    );
    let pad = gathered.pad(1, &[7]).sqrt_safe();
    div.mean() + logs.sum() * s + pad.sum() + (a.t().sum_axis(0) * 0.1).exp().sum() + (m.relu() - c.clamp(-0.3, 0.4)).sum()
        + (b.powf(2.0) + b.scale(-0.2)).sum()
        + a.matmul_t(c, true, false).sum() * 0.01 + a.t().matmul_t(b.t(), true, true).sum() * 0.02
}

trait SqrtSafe {
    fn sqrt_safe(&self) -> Self;
}

impl SqrtSafe for Var<'_> {
    fn sqrt_safe(&self) -> Self {
        self.square().add_const(1.0).sqrt()
    }
}

fn composite_value(ts: &[Tensor]) -> f64 {
    let g = Graph::new();
    let v: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
    composite(&g, v[0], v[1], v[2], v[3]).item()
}

fn composite_inputs(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        random_tensor(&mut rng, &[3, 4]),
        random_tensor(&mut rng, &[4, 2]),
        random_tensor(&mut rng, &[3, 2]),
        random_tensor(&mut rng, &[1]),
    ]
}

/// Kinks of relu/softshrink/clamp make the FD oracle invalid at a few
/// points; skip inputs sitting within a few steps of one.
fn near_kink(ts: &[Tensor]) -> bool {
    let probe = |delta: f64| {
        let mut shifted = ts.to_vec();
        for t in &mut shifted {
            for x in t.data_mut() {
                *x += delta;
            }
        }
        composite_value(&shifted)
    };
    let h = 1e-4;
    let (fm, f0, fp) = (probe(-h), probe(0.0), probe(h));
    ((fp - f0) - (f0 - fm)).abs() > 1e-5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn composed_primitives_match_finite_differences(seed in 0u64..10_000) {
        let inputs = composite_inputs(seed);
        prop_assume!(!near_kink(&inputs));
        let g = Graph::new();
        let v: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let f = composite(&g, v[0], v[1], v[2], v[3]);
        let grads = g.grad_tensors(f, &v).unwrap();
        let fd = finite_diff(&inputs, 1e-5, &composite_value);
        for (analytic, numeric) in grads.iter().zip(&fd) {
            for (a, n) in analytic.data().iter().zip(numeric) {
                prop_assert!(rel_err(*a, *n) < 1e-5, "{} vs {}", a, n);
            }
        }
    }

    #[test]
    fn second_order_matches_finite_differences_of_gradient(seed in 0u64..10_000) {
        let inputs = composite_inputs(seed);
        prop_assume!(!near_kink(&inputs));
        // Scalar function of all inputs: h(x) = <∇f(x), u> for a fixed u, so
        // ∇h is a Hessian-vector product.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let dirs: Vec<Tensor> = inputs.iter().map(|t| random_tensor(&mut rng, t.shape())).collect();
        let hvp_objective = |ts: &[Tensor]| {
            let g = Graph::new();
            let v: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
            let f = composite(&g, v[0], v[1], v[2], v[3]);
            let grads = g.grad_tensors(f, &v).unwrap();
            grads.iter().zip(&dirs).map(|(gr, u)| gr.data().iter().zip(u.data()).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>()
        };
        let g = Graph::new();
        let v: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let f = composite(&g, v[0], v[1], v[2], v[3]);
        let grads = g.grad(f, &v, true).unwrap();
        let mut h = g.scalar(0.0);
        for (gr, u) in grads.iter().zip(&dirs) {
            h = h + (*gr * g.constant(u.clone())).sum();
        }
        let hv = g.grad_tensors(h, &v).unwrap();
        let fd = finite_diff(&inputs, 1e-5, &hvp_objective);
        for (analytic, numeric) in hv.iter().zip(&fd) {
            for (a, n) in analytic.data().iter().zip(numeric) {
                prop_assert!(rel_err(*a, *n) < 1e-4, "{} vs {}", a, n);
            }
        }
    }
}
