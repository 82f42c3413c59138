use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::Tensor;

use super::Episode;

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, PI);
pub const INPUT_RANGE: (f64, f64) = (-5.0, 5.0);

/// `y = amplitude · sin(x + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidSpec {
    pub amplitude: f64,
    pub phase: f64,
}

impl SinusoidSpec {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            amplitude: rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
            phase: rng.random_range(PHASE_RANGE.0..=PHASE_RANGE.1),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x + self.phase).sin()
    }

    fn points(&self, rng: &mut impl Rng, n: usize) -> (Tensor, Tensor) {
        let xs: Vec<f64> = (0..n)
            .map(|_| rng.random_range(INPUT_RANGE.0..=INPUT_RANGE.1))
            .collect();
        let ys = xs.iter().map(|&x| self.eval(x)).collect();
        (Tensor::new(&[n, 1], xs), Tensor::new(&[n, 1], ys))
    }

    pub fn episode(&self, rng: &mut impl Rng, shot: usize, query: usize, task_id: u64) -> Episode {
        let train = self.points(rng, shot);
        let test = self.points(rng, query);
        Episode::new(train, test, 1, shot, query, task_id).expect("sinusoid episode is well formed")
    }
}

/// Draws a random sinusoid and `shot` support / `query` query points on it.
pub fn sample_sinusoid_episode(rng: &mut impl Rng, shot: usize, query: usize) -> Episode {
    assert!(shot >= 1 && query >= 1, "shot and query must be positive");
    SinusoidSpec::sample(rng).episode(rng, shot, query, 0)
}
