use serde::{Deserialize, Serialize};

use crate::autodiff::Var;

use super::DecoderError;

/// Target shape of one generated weight block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlockSpec {
    pub shape: Vec<usize>,
}

impl ParamBlockSpec {
    pub fn new(shape: &[usize]) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "block extents must be positive");
        Self {
            shape: shape.to_vec(),
        }
    }

    pub fn flat_size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Linearly resamples a flat block to the spec's size (endpoints aligned) and
/// reshapes it. Identity when the sizes already match.
pub fn resize_params<'g>(raw: Var<'g>, spec: &ParamBlockSpec) -> Result<Var<'g>, DecoderError> {
    let n = raw.len();
    let target = spec.flat_size();
    let flat = raw.flatten();
    let resized = if n == target {
        flat
    } else if n < 2 {
        return Err(DecoderError::ResizeTooShort(n));
    } else {
        flat.resample(target)
    };
    Ok(resized.reshape(&spec.shape))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn resize(raw: &[f64], len: usize) -> Result<Vec<f64>, DecoderError> {
        let g = Graph::new();
        let v = g.constant(Tensor::from_vec(raw.to_vec()));
        resize_params(v, &ParamBlockSpec::new(&[len])).map(|r| r.value().data().to_vec())
    }

    #[test]
    fn examples() {
        assert_eq!(resize(&[0.4, -2.0, 7.0], 3).unwrap(), vec![0.4, -2.0, 7.0]);
        assert_eq!(resize(&[0.0, 1.0], 3).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(resize(&[0.0, 3.0, 6.0], 5).unwrap(), vec![0.0, 1.5, 3.0, 4.5, 6.0]);
        assert_eq!(resize(&[1.0], 3), Err(DecoderError::ResizeTooShort(1)));
        assert_eq!(resize(&[1.0], 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn reshapes_to_block() {
        let g = Graph::new();
        let v = g.constant(Tensor::from_vec((0..10).map(f64::from).collect()));
        let out = resize_params(v, &ParamBlockSpec::new(&[2, 3])).unwrap();
        assert_eq!(out.shape(), vec![2, 3]);
        assert_eq!(out.value().data()[5], 9.0);
    }

    proptest! {
        #[test]
        fn endpoints_and_monotonicity(
            steps in prop::collection::vec(0.0f64..2.0, 2..40),
            start in -3.0f64..3.0,
            len in 2usize..90,
        ) {
            let raw: Vec<f64> = steps
                .iter()
                .scan(start, |acc, s| { *acc += s; Some(*acc) })
                .collect();
            let out = resize(&raw, len).unwrap();
            prop_assert_eq!(out[0], raw[0]);
            prop_assert_eq!(out[len - 1], *raw.last().unwrap());
            for w in out.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }
}
