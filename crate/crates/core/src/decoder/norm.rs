use crate::autodiff::{Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Learnable scale and shift applied after standardizing a decoded block.
#[derive(Debug, Clone, Copy)]
pub struct ParamNorm<'g> {
    pub scale: Var<'g>,
    pub shift: Var<'g>,
    pub eps: f64,
}

impl<'g> ParamNorm<'g> {
    pub fn new(scale: Var<'g>, shift: Var<'g>) -> Self {
        Self {
            scale,
            shift,
            eps: NORM_EPS,
        }
    }
}

/// `γ·(θ̂ − μ)/√(σ² + ε) + β` with the block's mean and population variance.
pub fn param_normalize<'g>(raw: Var<'g>, pn: &ParamNorm<'g>) -> Var<'g> {
    assert!(pn.eps > 0.0, "normalization epsilon must be positive");
    let centered = raw.add_scalar(-raw.mean());
    let var = centered.square().mean();
    let factor = pn.scale / var.add_const(pn.eps).sqrt();
    centered.mul_scalar(factor).add_scalar(pn.shift)
}

/// Plain-tensor version of [`param_normalize`].
pub fn param_normalize_tensor(raw: &Tensor, scale: f64, shift: f64, eps: f64) -> Tensor {
    let n = raw.len() as f64;
    let mu = raw.sum() / n;
    let var = raw.data().iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    let factor = scale / (var + eps).sqrt();
    raw.map(|x| (x - mu) * factor + shift)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::Graph;

    fn run(raw: &[f64], scale: f64, shift: f64) -> Vec<f64> {
        let g = Graph::new();
        let pn = ParamNorm::new(g.scalar(scale), g.scalar(shift));
        let out = param_normalize(g.constant(Tensor::from_vec(raw.to_vec())), &pn);
        out.value().data().to_vec()
    }

    #[test]
    fn constant_block_maps_to_shift() {
        assert_eq!(run(&[2.5; 6], 1.0, 0.0), vec![0.0; 6]);
    }

    #[test]
    fn closed_form_pair() {
        let k = 1.0 / (1.0 + 1e-5f64).sqrt();
        let out = run(&[-1.0, 1.0], 1.0, 0.0);
        assert!((out[0] + k).abs() < 1e-15 && (out[1] - k).abs() < 1e-15);
        assert!((out[1] - 0.999995).abs() < 1e-8);
        let out = run(&[-1.0, 1.0], 2.0, 3.0);
        assert!((out[0] - (3.0 - 2.0 * k)).abs() < 1e-15);
        assert!((out[0] - 1.00001).abs() < 1e-8 && (out[1] - 4.99999).abs() < 1e-8);
    }

    #[test]
    fn graph_and_tensor_versions_agree() {
        let raw = [0.3, -1.2, 4.0, 0.0, 2.2];
        let t = param_normalize_tensor(&Tensor::from_vec(raw.to_vec()), 0.7, -0.1, NORM_EPS);
        for (a, b) in run(&raw, 0.7, -0.1).iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_wrt_scale_shift_and_input_matches_fd() {
        let raw = Tensor::from_vec(vec![0.3, -1.2, 4.0, 0.5]);
        let w = [0.2, -0.7, 1.1, 0.4];
        let objective = |r: &Tensor, s: f64, b: f64| -> f64 {
            param_normalize_tensor(r, s, b, NORM_EPS)
                .data()
                .iter()
                .zip(w)
                .map(|(x, w)| w * x + w * x * x)
                .sum()
        };
        let g = Graph::new();
        let (x, s, b) = (g.param(raw.clone()), g.param(Tensor::scalar(0.8)), g.param(Tensor::scalar(0.1)));
        let out = param_normalize(x, &ParamNorm::new(s, b));
        let wv = g.constant(Tensor::from_vec(w.to_vec()));
        let obj = (out * wv + out * out * wv).sum();
        let grads = g.grad_tensors(obj, &[x, s, b]).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let (mut p, mut m) = (raw.clone(), raw.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (objective(&p, 0.8, 0.1) - objective(&m, 0.8, 0.1)) / (2.0 * h);
            assert!((grads[0].data()[i] - fd).abs() < 1e-7, "{i}");
        }
        let fd = (objective(&raw, 0.8 + h, 0.1) - objective(&raw, 0.8 - h, 0.1)) / (2.0 * h);
        assert!((grads[1].item() - fd).abs() < 1e-7);
        let fd = (objective(&raw, 0.8, 0.1 + h) - objective(&raw, 0.8, 0.1 - h)) / (2.0 * h);
        assert!((grads[2].item() - fd).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn standardized_moments(raw in prop::collection::vec(-5.0f64..5.0, 2..64)) {
            let n = raw.len() as f64;
            let mu = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            prop_assume!(var > 0.5);
            let out = run(&raw, 1.0, 0.0);
            let m = out.iter().sum::<f64>() / n;
            let v = out.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-4);
        }
    }
}
