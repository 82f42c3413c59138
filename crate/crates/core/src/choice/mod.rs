//! Choice network: turns a layer's training inputs into convex weights over
//! the decoder bank via a capsule layer and fuzzy memberships.

mod features;
mod fuzzy;
mod routing;

pub use features::{extract_task_features, FeatureGeometry};
pub use fuzzy::{decoder_weights, membership, state_variables, uses_membership_a};
pub use routing::{dynamic_routing, dynamic_routing_traced, squash, RoutingTrace};

use thiserror::Error;

use crate::autodiff::Var;

pub const DEFAULT_ROUTING_ITERATIONS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChoiceError {
    #[error("invalid scan geometry: {0}")]
    Geometry(String),
    #[error("{state} state variables index 2^{state} decoders, but {decoders} were requested")]
    DecoderCount { state: usize, decoders: usize },
}

/// Outcome of one choice: per kernel dimension, the state variables and the
/// decoder weights.
#[derive(Debug, Clone)]
pub struct FuzzyWeights<'g> {
    pub state: Vec<Var<'g>>,
    pub weights: Vec<Var<'g>>,
}

/// Full choice pipeline for one layer on one task's training inputs.
pub fn choose<'g>(
    input: Var<'g>,
    geom: &FeatureGeometry,
    capsule_weights: Var<'g>,
    iterations: usize,
) -> Result<FuzzyWeights<'g>, ChoiceError> {
    let n_f = capsule_weights.shape()[0];
    let decoders = 1usize << n_f;
    let mut out = FuzzyWeights {
        state: Vec::new(),
        weights: Vec::new(),
    };
    for u_hat in extract_task_features(input, geom, capsule_weights)? {
        let gamma = state_variables(dynamic_routing(u_hat, iterations));
        out.weights.push(decoder_weights(gamma, decoders)?);
        out.state.push(gamma);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{Graph, Tensor};
    use crate::decoder::uniform_fan_in;

    fn run(x: &Tensor, w: &Tensor) -> Vec<f64> {
        let g = Graph::new();
        let geom = FeatureGeometry::dense(x.shape()[1]);
        let fw = choose(g.constant(x.clone()), &geom, g.constant(w.clone()), 3).unwrap();
        fw.weights[0].value().data().to_vec()
    }

    #[test]
    fn zero_input_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = uniform_fan_in(&mut rng, &[3, 4]);
        assert_eq!(run(&Tensor::zeros(&[5, 4]), &w), vec![0.125; 8]);
    }

    #[test]
    fn batches_differ_and_duplicates_stay_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = uniform_fan_in(&mut rng, &[2, 3]);
        let a = uniform_fan_in(&mut rng, &[4, 3]).map(|x| x * 3.0);
        let b = uniform_fan_in(&mut rng, &[4, 3]).map(|x| x * 3.0);
        let (ca, cb) = (run(&a, &w), run(&b, &w));
        assert_ne!(ca, cb);
        assert_eq!(run(&a, &w), ca);

        let mut dup = a.data().to_vec();
        dup.extend_from_slice(a.data());
        let cd = run(&Tensor::new(&[8, 3], dup), &w);
        assert!((cd.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(cd.iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn weights_are_differentiable_in_capsule_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = uniform_fan_in(&mut rng, &[4, 3]);
        let w0 = uniform_fan_in(&mut rng, &[2, 3]);
        let probe = [1.0, -0.5, 0.25, 2.0];
        let f = |w: &Tensor| -> f64 { run(&x, w).iter().zip(probe).map(|(c, p)| c * p).sum() };
        let g = Graph::new();
        let wv = g.param(w0.clone());
        let fw = choose(g.constant(x.clone()), &FeatureGeometry::dense(3), wv, 3).unwrap();
        let obj = (fw.weights[0] * g.constant(Tensor::from_vec(probe.to_vec()))).sum();
        let grad = g.grad_tensors(obj, &[wv]).unwrap().remove(0);
        let h = 1e-6;
        for i in 0..w0.len() {
            let (mut p, mut m) = (w0.clone(), w0.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-5, "{i}: {a} vs {fd}");
        }
    }
}
