use crate::autodiff::{Tensor, Var};

/// Iterates of one routing run, kept for inspection.
#[derive(Debug, Clone)]
pub struct RoutingTrace {
    /// Coupling matrices `L: [N_f, J]`, one per iteration.
    pub couplings: Vec<Tensor>,
    /// Logits `b` that produced each coupling.
    pub logits: Vec<Tensor>,
}

/// One capsule layer with a single output capsule of length `N_f`.
///
/// Starting from `b = 0`, each of `iterations` rounds computes the coupling
/// `L` as a softmax of `b` over the `N_f` axis of every column, the
/// weighted sum `ŝ = Σ_j L_j ∘ û_j`, the squashed capsule `v`, and then
/// overwrites `b_n = û_n · v_n`.
pub fn dynamic_routing<'g>(u_hat: Var<'g>, iterations: usize) -> Var<'g> {
    route(u_hat, iterations, None)
}

pub fn dynamic_routing_traced<'g>(u_hat: Var<'g>, iterations: usize) -> (Var<'g>, RoutingTrace) {
    let mut trace = RoutingTrace {
        couplings: Vec::new(),
        logits: Vec::new(),
    };
    let v = route(u_hat, iterations, Some(&mut trace));
    (v, trace)
}

fn route<'g>(u_hat: Var<'g>, iterations: usize, mut trace: Option<&mut RoutingTrace>) -> Var<'g> {
    assert!(iterations >= 1, "routing needs at least one iteration");
    let g = u_hat.graph();
    let shape = u_hat.shape();
    let (n_f, j) = (shape[0], shape[1]);
    let mut b = g.constant(Tensor::zeros(&[n_f, j]));
    let mut v = g.constant(Tensor::zeros(&[n_f]));
    for _ in 0..iterations {
        let coupling = b.softmax(0);
        if let Some(t) = trace.as_deref_mut() {
            t.logits.push((*b.value()).clone());
            t.couplings.push((*coupling.value()).clone());
        }
        let s = (coupling * u_hat).sum_axis(1).reshape(&[n_f]);
        v = squash(s);
        b = u_hat * v.reshape(&[n_f, 1]).broadcast_to(&[n_f, j]);
    }
    v
}

/// `‖s‖²/(1 + ‖s‖²) · s/‖s‖`, zero at `s = 0`.
pub fn squash<'g>(s: Var<'g>) -> Var<'g> {
    let n2 = s.square().sum();
    s.mul_scalar(n2.sqrt() / n2.add_const(1.0))
}
