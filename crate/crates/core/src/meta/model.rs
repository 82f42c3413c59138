use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::choice::{choose, FeatureGeometry, DEFAULT_ROUTING_ITERATIONS};
use crate::decoder::{
    decode, dense_param_count, fc_decoder_count, param_normalize, resize_params, uniform_fan_in,
    ComplexityReport, DecoderBank, DecoderShape, ParamBlockSpec, ParamNorm,
};

use super::MetaError;

/// How a predict-network layer gets its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    /// Feature embedding: trained by the outer loop only, frozen per task.
    Embed,
    /// Weight decoded from the latent code; its bias is adapted per task.
    Generated,
    /// Held directly and adapted per task by gradient descent.
    Tuned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub role: LayerRole,
}

/// Source of generated-layer weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    /// Choice network plus decoder bank.
    Bank {
        decoder: DecoderShape,
        state_vars: usize,
        routing_iters: usize,
    },
    /// The latent code itself is the weight (no decoding, no normalization).
    Identity { latent: [usize; 2] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Regression,
    Classification,
}

/// Architecture of a meta-model. Layers use ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub generator: Option<Generator>,
    pub objective: Objective,
}

impl ModelSpec {
    /// Plain network with every layer tuned: the MAML baseline.
    pub fn dense(input_dim: usize, widths: &[usize], objective: Objective) -> Self {
        Self {
            input_dim,
            layers: widths
                .iter()
                .map(|&width| LayerSpec {
                    width,
                    role: LayerRole::Tuned,
                })
                .collect(),
            generator: None,
            objective,
        }
    }

    /// `(in, out)` of every layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut prev = self.input_dim;
        self.layers
            .iter()
            .map(|l| {
                let d = (prev, l.width);
                prev = l.width;
                d
            })
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.width)
    }

    pub fn embed_count(&self) -> usize {
        self.layers.iter().take_while(|l| l.role == LayerRole::Embed).count()
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        let bad = |msg: String| Err(MetaError::Spec(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        if let Some(i) = self.layers.iter().position(|l| l.width == 0) {
            return bad(format!("layers[{i}].width must be positive"));
        }
        let n_embed = self.embed_count();
        if let Some(i) = self.layers[n_embed..].iter().position(|l| l.role == LayerRole::Embed) {
            return bad(format!("layers[{}]: embedding layers must precede all others", n_embed + i));
        }
        if n_embed == self.layers.len() {
            return bad("the last layer cannot be an embedding layer".into());
        }
        let dims = self.layer_dims();
        let generated: Vec<usize> = (0..self.layers.len())
            .filter(|&i| self.layers[i].role == LayerRole::Generated)
            .collect();
        match (&self.generator, generated.is_empty()) {
            (None, false) => return bad("generated layers need a generator".into()),
            (Some(_), true) => return bad("generator configured but no layer is generated".into()),
            _ => {}
        }
        match self.generator {
            Some(Generator::Bank {
                decoder,
                state_vars,
                routing_iters,
            }) => {
                decoder.validate().map_err(|e| MetaError::Spec(format!("decoder: {e}")))?;
                if state_vars == 0 || state_vars > 16 {
                    return bad(format!("state_vars must be in 1..=16, got {state_vars}"));
                }
                if decoder.decoders != 1 << state_vars {
                    return bad(format!(
                        "decoders ({}) must equal 2^state_vars ({})",
                        decoder.decoders,
                        1usize << state_vars
                    ));
                }
                if routing_iters == 0 {
                    return bad("routing_iters must be positive".into());
                }
                let c_in = dims[generated[0]].0;
                if let Some(&i) = generated.iter().find(|&&i| dims[i].0 != c_in) {
                    return bad(format!(
                        "layers[{i}]: generated layers share one choice network and need equal input widths ({} vs {c_in})",
                        dims[i].0
                    ));
                }
                if decoder.output_len() < 2 {
                    if let Some(&i) = generated.iter().find(|&&i| dims[i].0 * dims[i].1 != decoder.output_len()) {
                        return bad(format!("layers[{i}]: decoder output too short to resize"));
                    }
                }
            }
            Some(Generator::Identity { latent }) => {
                if latent[0] == 0 || latent[1] == 0 {
                    return bad("identity latent extents must be positive".into());
                }
            }
            None => {}
        }
        Ok(())
    }
}

/// Parameter families; they differ in whether and how they adapt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Latent,
    Decoder,
    Choice,
    Tuned,
    GeneratedBias,
    Norm,
    /// Per-block inner learning rate and weight decay `[α, w]`.
    Rate,
}

impl ParamGroup {
    /// Adapted inside the inner loop.
    pub fn is_fast(self) -> bool {
        matches!(self, Self::Latent | Self::Tuned | Self::GeneratedBias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    /// Index of the `[α, w]` rate entry used when adapting this one.
    pub rate: Option<usize>,
}

/// Every learnable tensor of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    fn push(&mut self, name: String, group: ParamGroup, value: Tensor) -> usize {
        self.entries.push(ParamEntry {
            name,
            group,
            value,
            rate: None,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.entries[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.entries[i].value)
    }

    pub fn values(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.value)
    }

    pub fn values_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.value).collect()
    }

    /// Scalar count over the given groups.
    pub fn count(&self, groups: &[ParamGroup]) -> usize {
        self.entries
            .iter()
            .filter(|e| groups.contains(&e.group))
            .map(|e| e.value.len())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlot {
    role: LayerRole,
    in_dim: usize,
    out_dim: usize,
    weight: Option<usize>,
    bias: usize,
    norm: Option<usize>,
}

/// Initial inner-loop rate and weight decay for every block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateInit {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for RateInit {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.0,
        }
    }
}

/// A predict network together with its weight generator and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    slots: Vec<LayerSlot>,
    latent: Option<usize>,
    trunk: Option<usize>,
    heads: Option<usize>,
    capsule: Option<usize>,
}

impl Model {
    /// Fresh parameters: uniform `±1/√fan_in` weights, zero biases,
    /// `z ~ N(0, 0.1²)`, normalization scale `1/√fan_in` and shift 0.
    pub fn new(spec: ModelSpec, rates: RateInit, rng: &mut impl Rng) -> Result<Self, MetaError> {
        spec.validate()?;
        let mut params = ParamStore::default();
        let rate = |params: &mut ParamStore, name: String| {
            params.push(name, ParamGroup::Rate, Tensor::from_vec(vec![rates.lr, rates.weight_decay]))
        };

        let mut latent = None;
        let (mut trunk, mut heads, mut capsule) = (None, None, None);
        match spec.generator {
            Some(Generator::Bank {
                decoder, state_vars, ..
            }) => {
                let z = params.push("latent".into(), ParamGroup::Latent, decoder.init_latent(rng));
                let r = rate(&mut params, "rate.latent".into());
                params.entries[z].rate = Some(r);
                latent = Some(z);
                trunk = Some(params.push("decoder.trunk".into(), ParamGroup::Decoder, decoder.init_trunk(rng)));
                heads = Some(params.push("decoder.heads".into(), ParamGroup::Decoder, decoder.init_heads(rng)));
                let c_in = spec
                    .layer_dims()
                    .iter()
                    .zip(&spec.layers)
                    .find(|(_, l)| l.role == LayerRole::Generated)
                    .map(|(d, _)| d.0)
                    .expect("validated: a generated layer exists");
                capsule = Some(params.push(
                    "choice.capsule".into(),
                    ParamGroup::Choice,
                    uniform_fan_in(rng, &[state_vars, c_in]),
                ));
            }
            Some(Generator::Identity { latent: shape }) => {
                let z = params.push(
                    "latent".into(),
                    ParamGroup::Latent,
                    uniform_fan_in(rng, &shape),
                );
                let r = rate(&mut params, "rate.latent".into());
                params.entries[z].rate = Some(r);
                latent = Some(z);
            }
            None => {}
        }

        let mut slots = Vec::new();
        for (i, ((in_dim, out_dim), layer)) in spec.layer_dims().into_iter().zip(&spec.layers).enumerate() {
            let mut slot = LayerSlot {
                role: layer.role,
                in_dim,
                out_dim,
                weight: None,
                bias: 0,
                norm: None,
            };
            match layer.role {
                LayerRole::Embed | LayerRole::Tuned => {
                    let group = if layer.role == LayerRole::Embed {
                        ParamGroup::Embedding
                    } else {
                        ParamGroup::Tuned
                    };
                    let w = params.push(format!("layer.{i}.weight"), group, uniform_fan_in(rng, &[out_dim, in_dim]));
                    let b = params.push(format!("layer.{i}.bias"), group, Tensor::zeros(&[out_dim]));
                    if layer.role == LayerRole::Tuned {
                        let r = rate(&mut params, format!("rate.layer.{i}"));
                        params.entries[w].rate = Some(r);
                        params.entries[b].rate = Some(r);
                    }
                    slot.weight = Some(w);
                    slot.bias = b;
                }
                LayerRole::Generated => {
                    let b = params.push(format!("layer.{i}.bias"), ParamGroup::GeneratedBias, Tensor::zeros(&[out_dim]));
                    let r = rate(&mut params, format!("rate.layer.{i}.bias"));
                    params.entries[b].rate = Some(r);
                    slot.bias = b;
                    if matches!(spec.generator, Some(Generator::Bank { .. })) {
                        let scale = 1.0 / (in_dim as f64).sqrt();
                        slot.norm = Some(params.push(
                            format!("layer.{i}.norm"),
                            ParamGroup::Norm,
                            Tensor::from_vec(vec![scale, 0.0]),
                        ));
                    }
                }
            }
            slots.push(slot);
        }

        Ok(Self {
            spec,
            params,
            slots,
            latent,
            trunk,
            heads,
            capsule,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn is_classification(&self) -> bool {
        self.spec.objective == Objective::Classification
    }

    /// Parameters as graph nodes. Rates become constants unless
    /// `learnable_rates`; with `trainable` false everything is constant.
    pub fn bind<'g>(&self, g: &'g Graph, trainable: bool, learnable_rates: bool) -> Vec<Var<'g>> {
        self.params
            .entries
            .iter()
            .map(|e| {
                let learn = trainable && (e.group != ParamGroup::Rate || learnable_rates);
                if learn {
                    g.param(e.value.clone())
                } else {
                    g.constant(e.value.clone())
                }
            })
            .collect()
    }

    /// Indices of parameters adapted by the inner loop, with their rate slot.
    pub fn fast_params(&self) -> Vec<(usize, usize)> {
        self.params
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group.is_fast())
            .map(|(i, e)| (i, e.rate.expect("fast parameters carry a rate")))
            .collect()
    }

    /// Runs the outer-only embedding layers.
    pub fn embed<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Var<'g> {
        let n = self.spec.embed_count();
        let mut h = x;
        for slot in &self.slots[..n] {
            h = dense(h, p[slot.weight.expect("embedding weight")], p[slot.bias]).relu();
        }
        h
    }

    /// Decoder weights for every generated layer, from the layer inputs
    /// produced by `features` (already embedded) under parameters `p`.
    pub fn choose<'g>(&self, p: &[Var<'g>], features: Var<'g>) -> Result<Vec<Var<'g>>, MetaError> {
        match self.spec.generator {
            Some(Generator::Bank { .. }) => self.run(p, features, None).map(|(_, c)| c),
            _ => Ok(Vec::new()),
        }
    }

    /// Predict-network output on embedded `features`.
    pub fn forward<'g>(&self, p: &[Var<'g>], choice: &[Var<'g>], features: Var<'g>) -> Result<Var<'g>, MetaError> {
        self.run(p, features, Some(choice)).map(|(out, _)| out)
    }

    fn run<'g>(
        &self,
        p: &[Var<'g>],
        features: Var<'g>,
        choice: Option<&[Var<'g>]>,
    ) -> Result<(Var<'g>, Vec<Var<'g>>), MetaError> {
        let n_embed = self.spec.embed_count();
        let last = self.slots.len() - 1;
        let mut chosen = Vec::new();
        let mut decoded: Option<Var<'g>> = None;
        let mut h = features;
        let mut gen_index = 0;
        for (i, slot) in self.slots.iter().enumerate().skip(n_embed) {
            let weight = match slot.role {
                LayerRole::Generated => {
                    let w = self.generated_weight(p, slot, h, choice, gen_index, &mut decoded, &mut chosen)?;
                    gen_index += 1;
                    w
                }
                _ => p[slot.weight.expect("dense weight")],
            };
            h = dense(h, weight, p[slot.bias]);
            if i != last {
                h = h.relu();
            }
        }
        Ok((h, chosen))
    }

    #[allow(clippy::too_many_arguments)]
    fn generated_weight<'g>(
        &self,
        p: &[Var<'g>],
        slot: &LayerSlot,
        input: Var<'g>,
        choice: Option<&[Var<'g>]>,
        gen_index: usize,
        decoded: &mut Option<Var<'g>>,
        chosen: &mut Vec<Var<'g>>,
    ) -> Result<Var<'g>, MetaError> {
        let z = p[self.latent.expect("generator has a latent code")];
        let block = ParamBlockSpec::new(&[slot.out_dim, slot.in_dim]);
        match self.spec.generator {
            Some(Generator::Bank {
                decoder,
                routing_iters,
                ..
            }) => {
                let c = match choice {
                    Some(c) => c[gen_index],
                    None => {
                        let geom = FeatureGeometry::dense(slot.in_dim);
                        let fw = choose(input, &geom, p[self.capsule.expect("capsule")], routing_iters)?;
                        fw.weights[0]
                    }
                };
                chosen.push(c);
                let heads = match *decoded {
                    Some(h) => h,
                    None => {
                        let bank = DecoderBank::new(decoder, p[self.trunk.expect("trunk")], p[self.heads.expect("heads")])?;
                        let h = bank.forward(z)?;
                        *decoded = Some(h);
                        h
                    }
                };
                let raw = decode(heads, c)?;
                let norm = p[slot.norm.expect("normalized block")];
                let pn = ParamNorm::new(norm.slice(0, &[1]), norm.slice(1, &[1]));
                Ok(resize_params(param_normalize(raw, &pn), &block)?)
            }
            Some(Generator::Identity { .. }) => Ok(resize_params(z, &block)?),
            None => unreachable!("validated: generated layers need a generator"),
        }
    }

    /// Task loss of `output` against `target`.
    pub fn loss<'g>(&self, output: Var<'g>, target: Var<'g>) -> Result<Var<'g>, MetaError> {
        Ok(match self.spec.objective {
            Objective::Regression => crate::tasks::mse_loss(output, target)?,
            Objective::Classification => crate::tasks::cross_entropy_loss(output, target)?,
        })
    }

    /// Enumerated learnable-parameter counts.
    pub fn complexity(&self, learnable_rates: bool) -> ComplexityReport {
        use ParamGroup::*;
        let glt_decoder = self.params.count(&[Decoder]);
        let predict_model = self.params.count(&[Embedding, Tuned, GeneratedBias]);
        let mut auxiliary = self.params.count(&[Latent, Norm, Choice]);
        if learnable_rates {
            auxiliary += self.params.count(&[Rate]);
        }
        let fc_decoder_baseline = match self.spec.generator {
            Some(Generator::Bank { decoder, .. }) => fc_decoder_count(
                decoder.latent_dim(),
                decoder.output_len(),
                decoder.decoders,
                decoder.trunk().out_dim(),
            ),
            _ => 0,
        };
        ComplexityReport {
            fc_decoder_baseline,
            glt_decoder,
            predict_model,
            auxiliary,
            total: glt_decoder + predict_model + auxiliary,
        }
    }

    /// Weights plus biases the predict network would hold if every layer
    /// were dense.
    pub fn dense_equivalent_count(&self) -> usize {
        let mut widths = vec![self.spec.input_dim];
        widths.extend(self.spec.layers.iter().map(|l| l.width));
        dense_param_count(&widths)
    }

    /// Routing iterations used by the choice network.
    pub fn routing_iters(&self) -> usize {
        match self.spec.generator {
            Some(Generator::Bank { routing_iters, .. }) => routing_iters,
            _ => DEFAULT_ROUTING_ITERATIONS,
        }
    }
}

/// `x·Wᵀ + b` for `x: [n, in]`, `W: [out, in]`, `b: [out]`.
pub fn dense<'g>(x: Var<'g>, weight: Var<'g>, bias: Var<'g>) -> Var<'g> {
    let out = x.matmul_t(weight, false, true);
    out + bias.broadcast_to(&out.shape())
}
