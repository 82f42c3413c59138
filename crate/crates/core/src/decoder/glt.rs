use crate::autodiff::{Tensor, Var};

use super::DecoderError;

/// Latent code laid out as `[d, N_g]`: column `j` is group `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(Tensor);

impl LatentCode {
    pub fn new(z: Tensor) -> Result<Self, DecoderError> {
        if z.rank() != 2 {
            return Err(DecoderError::Dimension(format!(
                "latent code must be [d, groups], got {:?}",
                z.shape()
            )));
        }
        Ok(Self(z))
    }

    pub fn group_dim(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn groups(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Group linear transformation: `N_h` weight matrices `W_n: [m, d]`, stored
/// stacked as one `[N_h·m, d]` tensor so `h = [W_1 z; …; W_{N_h} z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GltShape {
    pub heads: usize,
    pub rows: usize,
    pub in_dim: usize,
}

impl GltShape {
    pub fn out_dim(&self) -> usize {
        self.heads * self.rows
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.out_dim(), self.in_dim]
    }

    pub fn param_count(&self) -> usize {
        self.heads * self.rows * self.in_dim
    }

    /// Stacks per-head weight matrices into the layer's storage layout.
    pub fn stack(heads: &[Tensor]) -> Result<Tensor, DecoderError> {
        let first = heads
            .first()
            .ok_or_else(|| DecoderError::Dimension("GLT layer needs at least one head".into()))?;
        let shape = first.shape().to_vec();
        let mut data = Vec::with_capacity(first.len() * heads.len());
        for w in heads {
            if w.shape() != shape.as_slice() || w.rank() != 2 {
                return Err(DecoderError::Dimension(
                    "all GLT head matrices must share one [m, d] shape".into(),
                ));
            }
            data.extend_from_slice(w.data());
        }
        Ok(Tensor::new(&[shape[0] * heads.len(), shape[1]], data))
    }
}

/// `h_n = W_n z` for every head, stacked along rows: `[N_h·m, N_g]`.
///
/// Output column `j` depends only on latent column `j`.
pub fn glt_forward<'g>(z: Var<'g>, weights: Var<'g>) -> Result<Var<'g>, DecoderError> {
    let (zs, ws) = (z.shape(), weights.shape());
    if zs.len() != 2 || ws.len() != 2 || ws[1] != zs[0] {
        return Err(DecoderError::Dimension(format!(
            "GLT weights {ws:?} cannot act on latent {zs:?}"
        )));
    }
    Ok(weights.matmul(z))
}
