//! Run configuration: a TOML file with one section per concern. Unknown keys
//! are rejected so hyperparameter typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::DecoderShape;
use crate::ensemble::LrSchedule;
use crate::meta::{
    AdamConfig, Generator, InnerConfig, LayerRole, LayerSpec, ModelSpec, Objective, RateInit,
};
use crate::tasks::GlyphPool;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Sinusoid,
    Glyph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dcn,
    Maml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Outer-only embedding widths applied to the raw input.
    #[serde(default)]
    pub embedding: Vec<usize>,
    pub hidden: Vec<usize>,
    /// Indices into `hidden` whose weights are decoded from the latent code.
    #[serde(default)]
    pub generated: Vec<usize>,
    #[serde(default)]
    pub latent_dim: usize,
    #[serde(default)]
    pub groups: usize,
    #[serde(default)]
    pub trunk_rows: usize,
    #[serde(default = "one")]
    pub trunk_heads: usize,
    #[serde(default)]
    pub head_rows: usize,
    #[serde(default = "one")]
    pub head_heads: usize,
    #[serde(default)]
    pub state_vars: usize,
    #[serde(default)]
    pub decoders: usize,
    #[serde(default = "default_softshrink")]
    pub softshrink: f64,
    #[serde(default = "default_routing")]
    pub routing_iters: usize,
}

fn one() -> usize {
    1
}

fn default_softshrink() -> f64 {
    0.01
}

fn default_routing() -> usize {
    crate::choice::DEFAULT_ROUTING_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerSection {
    pub steps: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "yes")]
    pub learnable_rates: bool,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub first_order: bool,
    /// Adaptation steps used at evaluation time.
    pub eval_steps: usize,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    #[serde(default = "default_decay_interval")]
    pub decay_interval: u64,
    #[serde(default = "default_period")]
    pub period: u64,
    #[serde(default)]
    pub cyclic_start: Option<u64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            decay_factor: default_decay_factor(),
            decay_interval: default_decay_interval(),
            period: default_period(),
            cyclic_start: None,
        }
    }
}

fn default_decay_factor() -> f64 {
    0.5
}

fn default_decay_interval() -> u64 {
    10_000
}

fn default_period() -> u64 {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterSection {
    pub lr: f64,
    pub batch: usize,
    pub iterations: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub schedule: ScheduleSection,
    /// Checkpoint cadence outside the snapshot window (0 = final only).
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub shot: usize,
    pub query: usize,
    #[serde(default)]
    pub way: usize,
    #[serde(default)]
    pub image_size: usize,
    #[serde(default)]
    pub train_characters: usize,
    #[serde(default)]
    pub test_characters: usize,
    #[serde(default)]
    pub first_seed: u64,
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    /// Snapshot cadence inside the cyclic regime.
    pub snapshot_every: u64,
    pub max_candidates: usize,
    pub validation_episodes: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            snapshot_every: 500,
            max_candidates: 10,
            validation_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub inner: InnerSection,
    pub outer: OuterSection,
    pub task: TaskSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.hidden.is_empty() {
            return Err(invalid("model.hidden", "at least one hidden layer is required"));
        }
        if m.hidden.contains(&0) || m.embedding.contains(&0) {
            return Err(invalid("model.hidden", "layer widths must be positive"));
        }
        match m.kind {
            ModelKind::Maml => {
                if !m.generated.is_empty() {
                    return Err(invalid("model.generated", "a maml model has no generated layers"));
                }
            }
            ModelKind::Dcn => {
                if m.generated.is_empty() {
                    return Err(invalid("model.generated", "a dcn model needs at least one generated layer"));
                }
                if let Some(&i) = m.generated.iter().find(|&&i| i >= m.hidden.len()) {
                    return Err(invalid("model.generated", format!("index {i} is outside model.hidden")));
                }
                for (name, v) in [
                    ("model.latent_dim", m.latent_dim),
                    ("model.groups", m.groups),
                    ("model.trunk_rows", m.trunk_rows),
                    ("model.trunk_heads", m.trunk_heads),
                    ("model.head_rows", m.head_rows),
                    ("model.head_heads", m.head_heads),
                    ("model.state_vars", m.state_vars),
                    ("model.routing_iters", m.routing_iters),
                ] {
                    if v == 0 {
                        return Err(invalid(name, "must be positive"));
                    }
                }
                if m.state_vars > 16 {
                    return Err(invalid("model.state_vars", "at most 16 state variables are supported"));
                }
                if m.decoders != 1 << m.state_vars {
                    return Err(invalid(
                        "model.decoders",
                        format!("must equal 2^model.state_vars = {}", 1usize << m.state_vars),
                    ));
                }
                if !(m.softshrink >= 0.0) {
                    return Err(invalid("model.softshrink", "must be non-negative"));
                }
            }
        }

        let i = &self.inner;
        if !(i.lr.is_finite()) {
            return Err(invalid("inner.lr", "must be finite"));
        }
        if let Some(c) = i.clip {
            if !(c > 0.0) {
                return Err(invalid("inner.clip", "must be positive when present"));
            }
        }

        let o = &self.outer;
        if !(o.lr > 0.0) {
            return Err(invalid("outer.lr", "must be positive"));
        }
        if o.batch == 0 {
            return Err(invalid("outer.batch", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&o.beta1) {
            return Err(invalid("outer.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return Err(invalid("outer.beta2", "must be in [0, 1)"));
        }
        if !(o.eps > 0.0) {
            return Err(invalid("outer.eps", "must be positive"));
        }
        self.schedule()
            .validate()
            .map_err(|msg| invalid("outer.schedule", msg))?;

        let t = &self.task;
        if t.shot == 0 {
            return Err(invalid("task.shot", "must be positive"));
        }
        if t.query == 0 {
            return Err(invalid("task.query", "must be positive"));
        }
        if self.experiment == Experiment::Glyph {
            if t.way < 2 {
                return Err(invalid("task.way", "glyph tasks need at least 2 ways"));
            }
            if t.image_size < 2 {
                return Err(invalid("task.image_size", "must be at least 2"));
            }
            if t.train_characters * 4 < t.way {
                return Err(invalid("task.train_characters", "pool smaller than task.way"));
            }
            if t.test_characters * 4 < t.way {
                return Err(invalid("task.test_characters", "pool smaller than task.way"));
            }
        }
        if self.ensemble.snapshot_every == 0 {
            return Err(invalid("ensemble.snapshot_every", "must be at least 1"));
        }
        if self.ensemble.max_candidates == 0 {
            return Err(invalid("ensemble.max_candidates", "must be at least 1"));
        }
        if self.ensemble.validation_episodes == 0 {
            return Err(invalid("ensemble.validation_episodes", "must be at least 1"));
        }
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes", "must be at least 1"));
        }
        self.model_spec()
            .validate()
            .map_err(|e| invalid("model", e.to_string()))?;
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.experiment {
            Experiment::Sinusoid => 1,
            Experiment::Glyph => self.task.image_size * self.task.image_size,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.experiment {
            Experiment::Sinusoid => 1,
            Experiment::Glyph => self.task.way,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        let m = &self.model;
        let mut layers: Vec<LayerSpec> = m
            .embedding
            .iter()
            .map(|&width| LayerSpec {
                width,
                role: LayerRole::Embed,
            })
            .collect();
        layers.extend(m.hidden.iter().enumerate().map(|(i, &width)| LayerSpec {
            width,
            role: if m.kind == ModelKind::Dcn && m.generated.contains(&i) {
                LayerRole::Generated
            } else {
                LayerRole::Tuned
            },
        }));
        layers.push(LayerSpec {
            width: self.output_dim(),
            role: LayerRole::Tuned,
        });
        let generator = (m.kind == ModelKind::Dcn).then_some(Generator::Bank {
            decoder: DecoderShape {
                group_dim: m.latent_dim,
                groups: m.groups,
                trunk_rows: m.trunk_rows,
                trunk_heads: m.trunk_heads,
                head_rows: m.head_rows,
                head_heads: m.head_heads,
                decoders: m.decoders,
                lambda: m.softshrink,
            },
            state_vars: m.state_vars,
            routing_iters: m.routing_iters,
        });
        ModelSpec {
            input_dim: self.input_dim(),
            layers,
            generator,
            objective: match self.experiment {
                Experiment::Sinusoid => Objective::Regression,
                Experiment::Glyph => Objective::Classification,
            },
        }
    }

    pub fn rate_init(&self) -> RateInit {
        RateInit {
            lr: self.inner.lr,
            weight_decay: self.inner.weight_decay,
        }
    }

    pub fn inner_config(&self) -> InnerConfig {
        InnerConfig {
            steps: self.inner.steps,
            learnable_rates: self.inner.learnable_rates,
            clip: self.inner.clip,
            first_order: self.inner.first_order,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.outer.beta1,
            beta2: self.outer.beta2,
            eps: self.outer.eps,
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        let s = &self.outer.schedule;
        LrSchedule {
            base: self.outer.lr,
            decay_factor: s.decay_factor,
            decay_interval: s.decay_interval,
            period: s.period,
            cyclic_start: s.cyclic_start,
        }
    }

    /// Class pools for meta-training and meta-testing; their stroke seeds
    /// are disjoint.
    pub fn glyph_pools(&self) -> (GlyphPool, GlyphPool) {
        let t = &self.task;
        let train = GlyphPool {
            first_seed: t.first_seed,
            characters: t.train_characters,
            image_size: t.image_size,
            jitter: t.jitter,
        };
        let test = GlyphPool {
            first_seed: t.first_seed + t.train_characters as u64,
            characters: t.test_characters,
            ..train
        };
        (train, test)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SINUSOID: &str = r#"
experiment = "sinusoid"
seed = 3
out_dir = "runs/x"

[model]
kind = "dcn"
hidden = [40, 40, 35]
generated = [1, 2]
latent_dim = 2
groups = 40
trunk_rows = 8
head_rows = 40
state_vars = 2
decoders = 4

[inner]
steps = 2
lr = 0.01
eval_steps = 10

[outer]
lr = 0.001
batch = 25
iterations = 100

[task]
shot = 5
query = 10
"#;

    #[test]
    fn parses_and_builds_the_model_spec() {
        let cfg = RunConfig::from_toml(SINUSOID).unwrap();
        let spec = cfg.model_spec();
        let roles: Vec<LayerRole> = spec.layers.iter().map(|l| l.role).collect();
        assert_eq!(
            roles,
            vec![LayerRole::Tuned, LayerRole::Generated, LayerRole::Generated, LayerRole::Tuned]
        );
        assert_eq!(spec.layer_dims(), vec![(1, 40), (40, 40), (40, 35), (35, 1)]);
        assert_eq!(cfg.inner_config().clip, None);
        assert_eq!(cfg.eval.episodes, 1000);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let text = SINUSOID.replace("steps = 2", "step = 2");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("step"), "{err}");
    }

    #[test]
    fn inconsistent_dimensions_name_the_field() {
        let text = SINUSOID.replace("decoders = 4", "decoders = 3");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(matches!(&err, ConfigError::Invalid { field, .. } if field == "model.decoders"), "{err}");
        let text = SINUSOID.replace("batch = 25", "batch = 0");
        assert!(RunConfig::from_toml(&text).unwrap_err().to_string().starts_with("outer.batch"));
        let text = SINUSOID.replace("generated = [1, 2]", "generated = [0, 1]");
        let err = RunConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("equal input widths"), "{err}");
    }
}
