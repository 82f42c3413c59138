use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::tasks::Episode;

use super::model::Model;
use super::MetaError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub steps: usize,
    /// Optimize the per-block `[α, w]` pairs in the outer loop.
    pub learnable_rates: bool,
    /// Global-norm clipping of each inner gradient.
    pub clip: Option<f64>,
    /// Treat inner gradients as constants (no second-order terms).
    pub first_order: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            learnable_rates: true,
            clip: None,
            first_order: false,
        }
    }
}

/// Result of adapting to one task on a graph.
pub struct Adapted<'g> {
    pub test_loss: Var<'g>,
    pub test_output: Var<'g>,
    /// Training loss before the first and after the last update.
    pub train_loss_before: f64,
    pub train_loss_after: f64,
    /// Adapted values of [`Model::fast_params`], in order.
    pub fast: Vec<Var<'g>>,
}

/// Scales `grads` jointly so their global L2 norm is at most `max_norm`.
/// The scaling factor stays on the graph.
pub fn clip_grad_norm<'g>(grads: &[Var<'g>], max_norm: f64) -> Vec<Var<'g>> {
    assert!(max_norm > 0.0, "clip norm must be positive");
    let Some(first) = grads.first() else {
        return Vec::new();
    };
    let sq: f64 = grads.iter().map(|g| g.value().sq_norm()).sum();
    if sq.sqrt() <= max_norm {
        return grads.to_vec();
    }
    let total = grads
        .iter()
        .map(|g| g.square().sum())
        .reduce(|a, b| a + b)
        .unwrap_or_else(|| first.graph().scalar(0.0));
    let factor = total.sqrt().recip_guarded().scale(max_norm);
    grads.iter().map(|g| g.mul_scalar(factor)).collect()
}

/// [`clip_grad_norm`] on plain tensors.
pub fn clip_grad_norm_tensors(grads: &mut [Tensor], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip norm must be positive");
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= k);
        }
    }
    norm
}

/// `p − α·(g + w·p)` with `rate = [α, w]`.
fn sgd_step<'g>(p: Var<'g>, grad: Var<'g>, rate: Var<'g>) -> Var<'g> {
    let alpha = rate.slice(0, &[1]);
    let decay = rate.slice(1, &[1]);
    p - (grad + p.mul_scalar(decay)).mul_scalar(alpha)
}

/// Fresh inner-loop node for a parameter so that gradients taken with
/// respect to it do not leak into quantities computed from the original.
fn fork<'g>(g: &'g Graph, p: Var<'g>) -> Var<'g> {
    if p.requires_grad() {
        p.add_const(0.0)
    } else {
        g.param((*p.value()).clone())
    }
}

fn finite(loss: Var<'_>, task_id: u64) -> Result<f64, MetaError> {
    let v = loss.item();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MetaError::NonFinite { task_id })
    }
}

/// Adapts the latent code, tuned layers and generated-layer biases to the
/// episode's training set, then scores the query set.
///
/// The decoder weights are chosen once, from the un-adapted model's layer
/// inputs; embedding, decoder and choice parameters stay fixed throughout.
pub fn inner_loop<'g>(
    model: &Model,
    g: &'g Graph,
    params: &[Var<'g>],
    episode: &Episode,
    cfg: &InnerConfig,
) -> Result<Adapted<'g>, MetaError> {
    let task_id = episode.task_id;
    let train_x = model.embed(params, g.constant(episode.train_x.clone()));
    let test_x = model.embed(params, g.constant(episode.test_x.clone()));
    let train_y = g.constant(episode.train_y.clone());
    let test_y = g.constant(episode.test_y.clone());
    let choice = model.choose(params, train_x)?;

    let slots = model.fast_params();
    let mut current: Vec<Var<'g>> = params.to_vec();
    let mut fast: Vec<Var<'g>> = slots.iter().map(|&(i, _)| fork(g, params[i])).collect();
    for (&(i, _), &f) in slots.iter().zip(&fast) {
        current[i] = f;
    }

    let mut train_loss_before = None;
    for _ in 0..cfg.steps {
        let out = model.forward(&current, &choice, train_x)?;
        let loss = model.loss(out, train_y)?;
        let value = finite(loss, task_id)?;
        train_loss_before.get_or_insert(value);
        let mut grads = g
            .grad(loss, &fast, !cfg.first_order)
            .map_err(|source| MetaError::Gradient { task_id, source })?;
        if let Some(max) = cfg.clip {
            grads = clip_grad_norm(&grads, max);
        }
        for (k, &(i, r)) in slots.iter().enumerate() {
            fast[k] = sgd_step(fast[k], grads[k], params[r]);
            current[i] = fast[k];
        }
    }

    let train_loss_after = g.no_grad(|| -> Result<f64, MetaError> {
        let out = model.forward(&current, &choice, train_x)?;
        finite(model.loss(out, train_y)?, task_id)
    })?;
    let test_output = model.forward(&current, &choice, test_x)?;
    let test_loss = model.loss(test_output, test_y)?;
    finite(test_loss, task_id)?;
    Ok(Adapted {
        test_loss,
        test_output,
        train_loss_before: train_loss_before.unwrap_or(train_loss_after),
        train_loss_after,
        fast,
    })
}

/// One dense layer of the reference MAML route: weight `[out, in]`, optional
/// bias `[out]`, and the `[α, w]` pair used to adapt both.
#[derive(Debug, Clone, Copy)]
pub struct MamlLayer<'g> {
    pub weight: Var<'g>,
    pub bias: Option<Var<'g>>,
    pub rate: Var<'g>,
}

fn maml_forward<'g>(layers: &[(Var<'g>, Option<Var<'g>>)], x: Var<'g>) -> Var<'g> {
    let mut h = x;
    for (k, &(w, b)) in layers.iter().enumerate() {
        h = h.matmul_t(w, false, true);
        if let Some(b) = b {
            h = h + b.broadcast_to(&h.shape());
        }
        if k + 1 < layers.len() {
            h = h.relu();
        }
    }
    h
}

/// Plain MAML on a ReLU network: `steps` gradient steps on every weight and
/// bias, differentiable through the updates unless `first_order`. Returns
/// the query loss under `loss`.
pub fn maml_inner_loop<'g>(
    g: &'g Graph,
    layers: &[MamlLayer<'g>],
    episode: &Episode,
    cfg: &InnerConfig,
    loss: impl Fn(Var<'g>, Var<'g>) -> Var<'g>,
) -> Result<Var<'g>, MetaError> {
    let task_id = episode.task_id;
    let train_x = g.constant(episode.train_x.clone());
    let train_y = g.constant(episode.train_y.clone());
    let mut fast: Vec<(Var<'g>, Option<Var<'g>>)> = layers
        .iter()
        .map(|l| (fork(g, l.weight), l.bias.map(|b| fork(g, b))))
        .collect();
    for _ in 0..cfg.steps {
        let l = loss(maml_forward(&fast, train_x), train_y);
        finite(l, task_id)?;
        let wrt: Vec<Var<'g>> = fast.iter().flat_map(|&(w, b)| std::iter::once(w).chain(b)).collect();
        let mut grads = g
            .grad(l, &wrt, !cfg.first_order)
            .map_err(|source| MetaError::Gradient { task_id, source })?
            .into_iter();
        if let Some(max) = cfg.clip {
            grads = clip_grad_norm(&grads.collect::<Vec<_>>(), max).into_iter();
        }
        for (k, layer) in layers.iter().enumerate() {
            let (w, b) = fast[k];
            let w = sgd_step(w, grads.next().expect("weight gradient"), layer.rate);
            let b = b.map(|b| sgd_step(b, grads.next().expect("bias gradient"), layer.rate));
            fast[k] = (w, b);
        }
    }
    let out = maml_forward(&fast, g.constant(episode.test_x.clone()));
    let l = loss(out, g.constant(episode.test_y.clone()));
    finite(l, task_id)?;
    Ok(l)
}
