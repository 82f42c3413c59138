use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};

use super::glt::{glt_forward, GltShape};
use super::DecoderError;

/// Dimensions of a decoder bank: a shared GLT trunk followed by ELU, then
/// `decoders` GLT output heads followed by softshrink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderShape {
    /// Rows `d` of the latent code.
    pub group_dim: usize,
    /// Column groups `N_g` of the latent code.
    pub groups: usize,
    pub trunk_rows: usize,
    pub trunk_heads: usize,
    pub head_rows: usize,
    pub head_heads: usize,
    /// Number of decoders `S`.
    pub decoders: usize,
    /// Softshrink threshold on the head outputs.
    pub lambda: f64,
}

impl DecoderShape {
    pub fn latent_shape(&self) -> [usize; 2] {
        [self.group_dim, self.groups]
    }

    pub fn latent_dim(&self) -> usize {
        self.group_dim * self.groups
    }

    pub fn trunk(&self) -> GltShape {
        GltShape {
            heads: self.trunk_heads,
            rows: self.trunk_rows,
            in_dim: self.group_dim,
        }
    }

    pub fn head(&self) -> GltShape {
        GltShape {
            heads: self.head_heads,
            rows: self.head_rows,
            in_dim: self.trunk().out_dim(),
        }
    }

    /// Shape of all heads stacked: `[S·N_h·m, trunk_out]`.
    pub fn heads_shape(&self) -> [usize; 2] {
        let h = self.head();
        [self.decoders * h.out_dim(), h.in_dim]
    }

    /// Flat length of one decoder's output.
    pub fn output_len(&self) -> usize {
        self.head().out_dim() * self.groups
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        let dims = [
            ("group_dim", self.group_dim),
            ("groups", self.groups),
            ("trunk_rows", self.trunk_rows),
            ("trunk_heads", self.trunk_heads),
            ("head_rows", self.head_rows),
            ("head_heads", self.head_heads),
            ("decoders", self.decoders),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(DecoderError::Dimension(format!("{name} must be positive")));
        }
        if !(self.lambda >= 0.0) {
            return Err(DecoderError::Dimension(format!(
                "softshrink threshold must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn init_trunk(&self, rng: &mut impl Rng) -> Tensor {
        uniform_fan_in(rng, &self.trunk().weight_shape())
    }

    pub fn init_heads(&self, rng: &mut impl Rng) -> Tensor {
        uniform_fan_in(rng, &self.heads_shape())
    }

    /// `z ~ N(0, 0.1²)`.
    pub fn init_latent(&self, rng: &mut impl Rng) -> Tensor {
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let n = self.latent_dim();
        Tensor::new(&self.latent_shape(), (0..n).map(|_| normal.sample(rng)).collect())
    }
}

/// Uniform in `±1/√fan_in` where fan-in is the column count.
pub fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize; 2]) -> Tensor {
    let bound = 1.0 / (shape[1] as f64).sqrt();
    let n = shape[0] * shape[1];
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Shared trunk plus stacked heads, bound on a graph.
#[derive(Debug, Clone, Copy)]
pub struct DecoderBank<'g> {
    pub shape: DecoderShape,
    pub trunk: Var<'g>,
    pub heads: Var<'g>,
}

impl<'g> DecoderBank<'g> {
    pub fn new(shape: DecoderShape, trunk: Var<'g>, heads: Var<'g>) -> Result<Self, DecoderError> {
        shape.validate()?;
        if trunk.shape() != shape.trunk().weight_shape() {
            return Err(DecoderError::Dimension(format!(
                "trunk weights {:?}, expected {:?}",
                trunk.shape(),
                shape.trunk().weight_shape()
            )));
        }
        if heads.shape() != shape.heads_shape() {
            return Err(DecoderError::Dimension(format!(
                "head weights {:?}, expected {:?}",
                heads.shape(),
                shape.heads_shape()
            )));
        }
        Ok(Self { shape, trunk, heads })
    }

    /// Every decoder's raw output, one row per decoder: `[S, output_len]`.
    pub fn forward(&self, z: Var<'g>) -> Result<Var<'g>, DecoderError> {
        if z.shape() != self.shape.latent_shape() {
            return Err(DecoderError::Dimension(format!(
                "latent {:?}, expected {:?}",
                z.shape(),
                self.shape.latent_shape()
            )));
        }
        let hidden = glt_forward(z, self.trunk)?.elu();
        let out = glt_forward(hidden, self.heads)?.softshrink(self.shape.lambda);
        Ok(out.reshape(&[self.shape.decoders, self.shape.output_len()]))
    }
}

/// Runs the bank and splits its output into one flat tensor per decoder.
pub fn decoder_forward<'g>(z: Var<'g>, bank: &DecoderBank<'g>) -> Result<Vec<Var<'g>>, DecoderError> {
    let stacked = bank.forward(z)?;
    let len = bank.shape.output_len();
    Ok((0..bank.shape.decoders)
        .map(|s| stacked.slice(s * len, &[len]))
        .collect())
}

/// Convex combination `Σ_s c_s · head_s` of stacked decoder outputs `[S, L]`.
pub fn decode<'g>(heads: Var<'g>, weights: Var<'g>) -> Result<Var<'g>, DecoderError> {
    let hs = heads.shape();
    let s = weights.len();
    if hs.len() != 2 || hs[0] != s {
        return Err(DecoderError::WeightCount {
            weights: s,
            decoders: hs.first().copied().unwrap_or(0),
        });
    }
    let total = weights.value().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DecoderError::NotConvex(total));
    }
    Ok(weights.reshape(&[1, s]).matmul(heads).reshape(&[hs[1]]))
}

/// [`decode`] over a list of flat head outputs.
pub fn decode_heads<'g>(heads: &[Var<'g>], weights: Var<'g>) -> Result<Var<'g>, DecoderError> {
    let first = heads.first().ok_or(DecoderError::WeightCount {
        weights: weights.len(),
        decoders: 0,
    })?;
    let len = first.len();
    let rows: Vec<Var<'g>> = heads.iter().map(|h| h.reshape(&[1, len])).collect();
    let stacked = first.graph().concat(&rows);
    decode(stacked, weights)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{elu, softshrink, Graph};

    fn tiny() -> DecoderShape {
        DecoderShape {
            group_dim: 2,
            groups: 1,
            trunk_rows: 2,
            trunk_heads: 1,
            head_rows: 2,
            head_heads: 1,
            decoders: 2,
            lambda: 0.01,
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let shape = DecoderShape { groups: 3, ..tiny() };
        let g = Graph::new();
        let bank = DecoderBank::new(
            shape,
            g.constant(Tensor::zeros(&shape.trunk().weight_shape())),
            g.constant(Tensor::zeros(&shape.heads_shape())),
        )
        .unwrap();
        let z = g.constant(Tensor::full(&shape.latent_shape(), 0.7));
        let outs = decoder_forward(z, &bank).unwrap();
        assert_eq!(outs.len(), 2);
        for o in outs {
            assert_eq!(o.len(), shape.output_len());
            assert!(o.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tiny_bank_matches_step_by_step_oracle() {
        let shape = tiny();
        let trunk = Tensor::from_rows(&[&[0.5, -1.0], &[2.0, 0.25]]);
        let heads = Tensor::from_rows(&[&[1.0, 0.5], &[-0.3, 0.2], &[0.0, 1.0], &[0.004, 0.001]]);
        let z = Tensor::new(&[2, 1], vec![0.4, 0.6]);

        // trunk: [0.5·0.4 − 0.6, 2·0.4 + 0.25·0.6] = [−0.4, 0.95]
        let pre = [0.5 * 0.4 - 1.0 * 0.6, 2.0 * 0.4 + 0.25 * 0.6];
        let hid = [(pre[0] as f64).exp_m1(), pre[1]];
        let head_pre = [
            1.0 * hid[0] + 0.5 * hid[1],
            -0.3 * hid[0] + 0.2 * hid[1],
            1.0 * hid[1],
            0.004 * hid[0] + 0.001 * hid[1],
        ];
        let shrink = |x: f64| {
            if x > 0.01 {
                x - 0.01
            } else if x < -0.01 {
                x + 0.01
            } else {
                0.0
            }
        };
        let expected: Vec<f64> = head_pre.iter().map(|&x| shrink(x)).collect();

        let g = Graph::new();
        let bank = DecoderBank::new(shape, g.constant(trunk.clone()), g.constant(heads.clone())).unwrap();
        let outs = decoder_forward(g.constant(z.clone()), &bank).unwrap();
        let got: Vec<f64> = outs.iter().flat_map(|o| o.value().data().to_vec()).collect();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{got:?} vs {expected:?}");
        }

        // Plain-tensor route agrees too.
        let h = elu(&trunk.matmul(&z));
        let o = softshrink(&heads.matmul(&h), 0.01).unwrap();
        assert_eq!(o.data(), got.as_slice());
    }

    #[test]
    fn decode_selection_and_convexity() {
        let g = Graph::new();
        let heads = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let sel = decode(heads, g.constant(Tensor::from_vec(vec![0.0, 1.0]))).unwrap();
        assert_eq!(sel.value().data(), &[0.0, 1.0]);
        let mix = decode(heads, g.constant(Tensor::from_vec(vec![0.25, 0.75]))).unwrap();
        assert_eq!(mix.value().data(), &[0.25, 0.75]);

        let same = g.constant(Tensor::from_rows(&[&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]]));
        let out = decode(same, g.constant(Tensor::from_vec(vec![0.2, 0.5, 0.3]))).unwrap();
        for (a, b) in out.value().data().iter().zip([0.3, -2.0, 5.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn decode_rejects_bad_weights() {
        let g = Graph::new();
        let heads = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(
            decode(heads, g.constant(Tensor::from_vec(vec![1.0, 0.0, 0.0]))),
            Err(DecoderError::WeightCount { weights: 3, decoders: 2 })
        ));
        assert!(matches!(
            decode(heads, g.constant(Tensor::from_vec(vec![0.5, 0.6]))),
            Err(DecoderError::NotConvex(_))
        ));
    }

    #[test]
    fn decode_heads_list_matches_stacked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = DecoderShape { groups: 3, ..tiny() };
        let g = Graph::new();
        let bank = DecoderBank::new(
            shape,
            g.constant(shape.init_trunk(&mut rng)),
            g.constant(shape.init_heads(&mut rng)),
        )
        .unwrap();
        let z = g.constant(shape.init_latent(&mut rng));
        let c = g.constant(Tensor::from_vec(vec![0.4, 0.6]));
        let a = decode(bank.forward(z).unwrap(), c).unwrap();
        let b = decode_heads(&decoder_forward(z, &bank).unwrap(), c).unwrap();
        assert_eq!(*a.value(), *b.value());
    }
}
