/// Piecewise-linear resampling of a 1-D signal with endpoint alignment:
/// the first and last input samples map onto the first and last outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    src_len: usize,
    taps: Vec<(usize, f64)>,
}

impl ResamplePlan {
    pub fn new(src_len: usize, dst_len: usize) -> Self {
        assert!(src_len >= 1 && dst_len >= 1, "resample lengths must be positive");
        let taps = if dst_len == 1 || src_len == 1 {
            vec![(0, 0.0); dst_len]
        } else {
            let step = (src_len - 1) as f64 / (dst_len - 1) as f64;
            (0..dst_len)
                .map(|i| {
                    if i == dst_len - 1 {
                        return (src_len - 1, 0.0);
                    }
                    let pos = i as f64 * step;
                    let lo = (pos.floor() as usize).min(src_len - 1);
                    (lo, pos - lo as f64)
                })
                .collect()
        };
        Self { src_len, taps }
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn dst_len(&self) -> usize {
        self.taps.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.src_len, "resample input length");
        self.taps
            .iter()
            .map(|&(lo, frac)| {
                if frac == 0.0 {
                    x[lo]
                } else {
                    (1.0 - frac) * x[lo] + frac * x[lo + 1]
                }
            })
            .collect()
    }

    pub fn apply_adjoint(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.taps.len(), "resample adjoint input length");
        let mut out = vec![0.0; self.src_len];
        for (&(lo, frac), &gi) in self.taps.iter().zip(g) {
            out[lo] += (1.0 - frac) * gi;
            if frac != 0.0 {
                out[lo + 1] += frac * gi;
            }
        }
        out
    }
}
