use std::rc::Rc;

use crate::autodiff::Var;

use super::ChoiceError;

/// Left-shoulder membership `μ_A(x) = 1 − clamp(x, 0, 1)`; `μ_B = 1 − μ_A`.
pub fn membership(x: f64) -> f64 {
    1.0 - x.clamp(0.0, 1.0)
}

/// Maps capsule outputs from `[−1, 1]` to `[0, 1]`.
pub fn state_variables<'g>(v: Var<'g>) -> Var<'g> {
    v.add_const(1.0).scale(0.5)
}

/// Whether decoder `s` (0-based) takes `μ_A` of state variable `n`.
///
/// Decoder 0 takes `μ_A` of every variable, and bit `n` of `s` switches
/// variable `n` to `μ_B`.
pub fn uses_membership_a(s: usize, n: usize) -> bool {
    (s >> n) & 1 == 0
}

/// Firing strengths `c_s = Π_n μ(γ_n)` over all `2^{N_f}` decoders.
pub fn decoder_weights<'g>(gamma: Var<'g>, decoders: usize) -> Result<Var<'g>, ChoiceError> {
    let n_f = gamma.len();
    if n_f >= usize::BITS as usize || decoders != 1usize << n_f {
        return Err(ChoiceError::DecoderCount { state: n_f, decoders });
    }
    let g = gamma.graph();
    let b = gamma.flatten().clamp(0.0, 1.0);
    let a = b.scale(-1.0).add_const(1.0);
    let both = g.concat(&[a, b]);
    let mut c: Option<Var<'g>> = None;
    for n in 0..n_f {
        let index: Rc<[usize]> = (0..decoders)
            .map(|s| if uses_membership_a(s, n) { n } else { n_f + n })
            .collect();
        let factor = both.gather(index, &[decoders]);
        c = Some(match c {
            Some(acc) => acc * factor,
            None => factor,
        });
    }
    Ok(c.unwrap_or_else(|| g.scalar(1.0)))
}
