//! Latent-code decoders: group linear transformations, a shared-trunk
//! multi-head decoder bank, parameter normalization and resizing.

mod bank;
mod counts;
mod glt;
mod norm;
mod resize;

pub use bank::{decode, decode_heads, decoder_forward, uniform_fan_in, DecoderBank, DecoderShape};
pub use counts::{dense_param_count, fc_decoder_count, ComplexityReport};
pub use glt::{glt_forward, GltShape, LatentCode};
pub use norm::{param_normalize, param_normalize_tensor, ParamNorm, NORM_EPS};
pub use resize::{resize_params, ParamBlockSpec};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{weights} decoder weights supplied for {decoders} decoders")]
    WeightCount { weights: usize, decoders: usize },
    #[error("decoder weights must sum to 1, got {0}")]
    NotConvex(f64),
    #[error("cannot resize a block of {0} element(s)")]
    ResizeTooShort(usize),
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn shape() -> DecoderShape {
        DecoderShape {
            group_dim: 3,
            groups: 4,
            trunk_rows: 3,
            trunk_heads: 2,
            head_rows: 5,
            head_heads: 2,
            decoders: 3,
            lambda: 0.01,
        }
    }

    /// Full decoding path `z → θ` as plain numbers for finite differences.
    fn pipeline(z: &Tensor, trunk: &Tensor, heads: &Tensor, c: &[f64], create: bool) -> (Tensor, Option<Tensor>) {
        let g = Graph::new();
        let zv = g.param(z.clone());
        let s = shape();
        let bank = DecoderBank::new(s, g.constant(trunk.clone()), g.constant(heads.clone())).unwrap();
        let raw = decode(bank.forward(zv).unwrap(), g.constant(Tensor::from_vec(c.to_vec()))).unwrap();
        let pn = ParamNorm::new(g.scalar(0.9), g.scalar(0.05));
        let theta = resize_params(param_normalize(raw, &pn), &ParamBlockSpec::new(&[7, 11])).unwrap();
        let grad = create.then(|| {
            let w = Tensor::from_vec((0..77).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect());
            let obj = (theta.flatten() * g.constant(w)).sum();
            g.grad_tensors(obj, &[zv]).unwrap().remove(0)
        });
        ((*theta.value()).clone(), grad)
    }

    #[test]
    fn latent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let s = shape();
        let (trunk, heads) = (s.init_trunk(&mut rng), s.init_heads(&mut rng));
        let z = s.init_latent(&mut rng).map(|x| x * 5.0);
        let c = [0.2, 0.5, 0.3];
        let w: Vec<f64> = (0..77).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let f = |z: &Tensor| -> f64 {
            let (t, _) = pipeline(z, &trunk, &heads, &c, false);
            t.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, grad) = pipeline(&z, &trunk, &heads, &c, true);
        let grad = grad.unwrap();
        let h = 1e-6;
        for i in 0..z.len() {
            let (mut p, mut m) = (z.clone(), z.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-5, "coordinate {i}: {a} vs {fd}");
        }
    }

    #[test]
    fn single_group_single_head_is_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = uniform_fan_in(&mut rng, &[6, 4]);
        let z = uniform_fan_in(&mut rng, &[4, 1]);
        let g = Graph::new();
        let out = glt_forward(g.constant(z.clone()), g.constant(w.clone())).unwrap();
        for i in 0..6 {
            let dense: f64 = (0..4).map(|k| w.at(i, k) * z.data()[k]).sum();
            assert!((out.value().data()[i] - dense).abs() < 1e-12);
        }
    }

    #[test]
    fn glt_count_enumerates_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = shape();
        let n = s.init_trunk(&mut rng).len() + s.init_heads(&mut rng).len();
        assert_eq!(n, s.trunk().param_count() + s.decoders * s.head().param_count());
    }

    proptest! {
        #[test]
        fn perturbing_one_group_touches_one_column(col in 0usize..4, delta in -2.0f64..2.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = shape();
            let g = Graph::new();
            let bank = DecoderBank::new(s, g.constant(s.init_trunk(&mut rng)), g.constant(s.init_heads(&mut rng))).unwrap();
            let z = s.init_latent(&mut rng);
            let mut z2 = z.clone();
            z2.data_mut()[col] += delta;
            let hidden = |z: &Tensor| glt_forward(g.constant(z.clone()), bank.trunk).unwrap().value();
            let (a, b) = (hidden(&z), hidden(&z2));
            for i in 0..a.shape()[0] {
                for j in 0..4 {
                    if j != col {
                        prop_assert_eq!(a.at(i, j), b.at(i, j));
                    }
                }
            }
        }

        #[test]
        fn decode_is_permutation_equivariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = Graph::new();
            let h = uniform_fan_in(&mut rng, &[3, 6]);
            let c = [0.1, 0.6, 0.3];
            let perm = [2, 0, 1];
            let hp = Tensor::new(&[3, 6], perm.iter().flat_map(|&p| h.data()[p * 6..(p + 1) * 6].to_vec()).collect());
            let cp: Vec<f64> = perm.iter().map(|&p| c[p]).collect();
            let a = decode(g.constant(h), g.constant(Tensor::from_vec(c.to_vec()))).unwrap().value();
            let b = decode(g.constant(hp), g.constant(Tensor::from_vec(cp))).unwrap().value();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
