use serde::{Deserialize, Serialize};

/// Learnable-parameter accounting for a meta-model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Closed-form count of a two-layer fully connected decoder bank that
    /// emits every decoder's block directly: `[dim(z) + dim(θ)·S]·dim(h)`.
    pub fc_decoder_baseline: usize,
    /// Enumerated weights in the GLT trunk and heads.
    pub glt_decoder: usize,
    /// Parameters of the predict network held directly (tuned layers,
    /// embedding and generated-layer biases).
    pub predict_model: usize,
    /// Latent code, normalization scales/shifts and inner-loop rates.
    pub auxiliary: usize,
    pub total: usize,
}

/// `[dim(z) + dim(θ)·S]·dim(h)`.
pub fn fc_decoder_count(dim_z: usize, dim_theta: usize, decoders: usize, dim_h: usize) -> usize {
    (dim_z + dim_theta * decoders) * dim_h
}

/// Weights plus biases of a dense chain with the given layer widths.
pub fn dense_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_baseline_net() {
        assert_eq!(dense_param_count(&[1, 40, 40, 35, 1]), 3191);
        assert_eq!(dense_param_count(&[1, 40, 40, 1]), 1761);
    }

    #[test]
    fn fc_decoder_formula() {
        assert_eq!(fc_decoder_count(8, 100, 4, 20), 8160);
    }
}
