use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};

use super::ChoiceError;

/// Scan geometry of the layer whose input feeds the choice network.
///
/// Dense layers are the degenerate case: `height = width = 1` with a 1×1
/// kernel, which yields a single kernel dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl FeatureGeometry {
    pub fn dense(channels: usize) -> Self {
        Self {
            channels,
            height: 1,
            width: 1,
            kernel: (1, 1),
            stride: (1, 1),
            padding: (0, 0),
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// `(H_ou, W_ou)`.
    pub fn output_size(&self) -> Result<(usize, usize), ChoiceError> {
        let ph = self.height + 2 * self.padding.0;
        let pw = self.width + 2 * self.padding.1;
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(ChoiceError::Geometry("kernel and stride must be positive".into()));
        }
        if self.kernel.0 > ph || self.kernel.1 > pw {
            return Err(ChoiceError::Geometry(format!(
                "kernel {:?} larger than padded input {ph}x{pw}",
                self.kernel
            )));
        }
        Ok(((ph - self.kernel.0) / self.stride.0 + 1, (pw - self.kernel.1) / self.stride.1 + 1))
    }

    pub fn kernel_dims(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    /// Feature columns `J = H_ou·W_ou·N_d·C_in` for `examples` inputs.
    pub fn columns(&self, examples: usize) -> Result<usize, ChoiceError> {
        let (ho, wo) = self.output_size()?;
        Ok(ho * wo * examples * self.channels)
    }

    /// Flat input positions scanned by kernel dimension `k` (row-major over
    /// the kernel), ordered channel, example, output row, output column.
    /// Positions falling in the zero padding map to `pad_index`.
    pub fn scan_positions(&self, k: usize, examples: usize, pad_index: usize) -> Result<Vec<usize>, ChoiceError> {
        let (ho, wo) = self.output_size()?;
        let (a, b) = (k / self.kernel.1, k % self.kernel.1);
        let mut out = Vec::with_capacity(ho * wo * examples * self.channels);
        for e in 0..self.channels {
            for n in 0..examples {
                for i in 0..ho {
                    for j in 0..wo {
                        let r = (a + i * self.stride.0) as isize - self.padding.0 as isize;
                        let c = (b + j * self.stride.1) as isize - self.padding.1 as isize;
                        let inside = r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width;
                        out.push(if inside {
                            ((n * self.channels + e) * self.height + r as usize) * self.width + c as usize
                        } else {
                            pad_index
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Builds `û_k: [N_f, J]` for every kernel dimension `k` from a layer input
/// `[N_d, C_in·H·W]` and per-channel capsule weights `[N_f, C_in]`.
///
/// Column `j` belonging to channel `e` is the scanned input value times
/// capsule weight column `e`.
pub fn extract_task_features<'g>(
    input: Var<'g>,
    geom: &FeatureGeometry,
    weights: Var<'g>,
) -> Result<Vec<Var<'g>>, ChoiceError> {
    let shape = input.shape();
    if shape.len() != 2 || shape[1] != geom.input_len() {
        return Err(ChoiceError::Geometry(format!(
            "layer input {shape:?} does not match {} features per example",
            geom.input_len()
        )));
    }
    let ws = weights.shape();
    if ws.len() != 2 || ws[1] != geom.channels {
        return Err(ChoiceError::Geometry(format!(
            "capsule weights {ws:?} need {} columns",
            geom.channels
        )));
    }
    let (examples, n_f) = (shape[0], ws[0]);
    let j = geom.columns(examples)?;
    let per_channel = j / geom.channels;

    let flat = input.flatten();
    let padded = if geom.padding != (0, 0) {
        let g = input.graph();
        g.concat(&[flat, g.constant(Tensor::from_vec(vec![0.0]))])
    } else {
        flat
    };
    let w_index: Rc<[usize]> = (0..n_f)
        .flat_map(|f| (0..j).map(move |col| f * geom.channels + col / per_channel))
        .collect();
    let w_cols = weights.gather(w_index, &[n_f, j]);

    (0..geom.kernel_dims())
        .map(|k| {
            let pos: Rc<[usize]> = geom.scan_positions(k, examples, flat.len())?.into();
            let u = padded.gather(pos, &[1, j]).broadcast_to(&[n_f, j]);
            Ok(w_cols * u)
        })
        .collect()
}
