//! End-to-end drivers behind the command line: training with checkpoints
//! and snapshots, evaluation of a checkpoint, and ensemble selection.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, Experiment, RunConfig};
use crate::ensemble::{
    cap_candidates, greedy_select, lr_at, member_predictions, score_predictions, selection_score, Candidate,
    EnsembleError, TraceEntry,
};
use crate::meta::{evaluate, outer_step, AdamAmsgrad, EvalReport, InnerConfig, MeanCi, MetaError, Model};
use crate::metrics::{JsonlWriter, MetricsRecord, TimingRecord};
use crate::tasks::{sample_glyph_episode, sample_sinusoid_episode, Episode, GlyphPool, TaskError};

/// Reserved RNG streams; training iteration `t` uses stream `t`.
pub const STREAM_INIT: u64 = u64::MAX;
pub const STREAM_VALIDATION: u64 = u64::MAX - 1;
pub const STREAM_EVAL: u64 = u64::MAX - 2;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite loss or gradient at iteration {iteration}, task {task_id}")]
    NonFinite { iteration: u64, task_id: u64 },
    #[error("no checkpoints found in {0}")]
    EmptyDir(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::EmptyDir(_) => 2,
            RunError::NonFinite { .. } => 3,
            RunError::Checkpoint(CheckpointError::Architecture(_)) => 4,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub iterations: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(i) = self.iterations {
            cfg.outer.iterations = i;
        }
        cfg.validate()
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Freshly initialized model for `cfg`.
pub fn build_model(cfg: &RunConfig) -> Result<Model, RunError> {
    Ok(Model::new(
        cfg.model_spec(),
        cfg.rate_init(),
        &mut stream_rng(cfg.seed, STREAM_INIT),
    )?)
}

/// Which class pool episodes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Samples `n` episodes with `shot` support examples per class; task ids
/// start at `first_id`.
pub fn sample_episodes(
    cfg: &RunConfig,
    split: Split,
    rng: &mut ChaCha8Rng,
    n: usize,
    shot: usize,
    first_id: u64,
) -> Result<Vec<Episode>, TaskError> {
    let pool: Option<GlyphPool> = (cfg.experiment == Experiment::Glyph).then(|| {
        let (train, test) = cfg.glyph_pools();
        if split == Split::Train {
            train
        } else {
            test
        }
    });
    (0..n)
        .map(|i| {
            let mut e = match &pool {
                None => sample_sinusoid_episode(rng, shot, cfg.task.query),
                Some(p) => sample_glyph_episode(rng, p, cfg.task.way, shot, cfg.task.query)?,
            };
            e.task_id = first_id + i as u64;
            Ok(e)
        })
        .collect()
}

pub fn metrics_path(out: &Path) -> PathBuf {
    out.join("metrics.jsonl")
}

pub fn final_checkpoint_path(out: &Path) -> PathBuf {
    out.join("final.json")
}

pub fn snapshot_dir(out: &Path) -> PathBuf {
    out.join("snapshots")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub iterations: u64,
    pub final_checkpoint: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub last: Option<MetricsRecord>,
}

/// Meta-trains the model described by `cfg`, optionally resuming from a
/// checkpoint. Results do not depend on `threads`.
pub fn run_train(cfg: &RunConfig, threads: usize, resume: Option<&Path>) -> Result<TrainOutcome, RunError> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let config_text = cfg.to_toml();
    let echo = out.join("config.toml");
    std::fs::write(&echo, &config_text).map_err(io_err(&echo))?;

    let mut model = build_model(cfg)?;
    let mut opt = AdamAmsgrad::new(cfg.adam(), model.params().values());
    let mut start = 0;
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        ck.restore_into(&mut model)?;
        if let Some(o) = ck.optimizer {
            opt = o;
        }
        start = ck.iteration;
        log::info!("resuming from {} at iteration {start}", path.display());
    }

    let mut metrics = JsonlWriter::open(&metrics_path(out), start).map_err(io_err(out))?;
    let timing_path = out.join("timing.jsonl");
    let mut timing = JsonlWriter::open(&timing_path, start).map_err(io_err(&timing_path))?;
    let inner = cfg.inner_config();
    let schedule = cfg.schedule();
    let batch = cfg.outer.batch;
    let snap_dir = snapshot_dir(out);
    let mut snapshots = Vec::new();
    let mut last = None;
    let clock = Instant::now();

    for t in start + 1..=cfg.outer.iterations {
        let mut rng = stream_rng(cfg.seed, t);
        let episodes = sample_episodes(cfg, Split::Train, &mut rng, batch, cfg.task.shot, (t - 1) * batch as u64)?;
        let lr = lr_at(t, &schedule);
        let step = outer_step(&mut model, &mut opt, &episodes, &inner, lr, threads).map_err(|e| match e {
            MetaError::NonFinite { task_id } => RunError::NonFinite { iteration: t, task_id },
            other => RunError::Meta(other),
        })?;
        if !step.train_loss.is_finite() || !step.test_loss.is_finite() {
            return Err(RunError::NonFinite {
                iteration: t,
                task_id: episodes[0].task_id,
            });
        }
        let rec = MetricsRecord {
            iteration: t,
            train_loss: step.train_loss,
            test_loss: step.test_loss,
            accuracy: step.accuracy,
            lr,
            grad_norm: step.grad_norm,
        };
        metrics.write(&rec).map_err(io_err(out))?;
        timing
            .write(&TimingRecord {
                iteration: t,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            })
            .map_err(io_err(&timing_path))?;
        if t % 100 == 0 {
            log::info!("iter {t} lr {lr:.2e} train {:.4} test {:.4}", rec.train_loss, rec.test_loss);
        }
        last = Some(rec);

        let in_window = matches!(schedule.cyclic_start, Some(s) if t >= s);
        if in_window && (t % cfg.ensemble.snapshot_every == 0 || schedule.is_cycle_end(t)) {
            let path = snap_dir.join(format!("snap-{t:07}.json"));
            Checkpoint::capture(&model, None, t, cfg.seed, config_text.clone()).save(&path)?;
            snapshots.push(path);
        }
        if cfg.outer.checkpoint_every > 0 && t % cfg.outer.checkpoint_every == 0 {
            let path = out.join("checkpoints").join(format!("ckpt-{t:07}.json"));
            Checkpoint::capture(&model, Some(&opt), t, cfg.seed, config_text.clone()).save(&path)?;
        }
    }

    let final_checkpoint = final_checkpoint_path(out);
    let done = cfg.outer.iterations.max(start);
    Checkpoint::capture(&model, Some(&opt), done, cfg.seed, config_text).save(&final_checkpoint)?;
    Ok(TrainOutcome {
        iterations: done,
        final_checkpoint,
        snapshots,
        last,
    })
}

/// Loads a checkpoint into a model built from `cfg`.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model, RunError> {
    let mut model = build_model(cfg)?;
    Checkpoint::load(checkpoint)?.restore_into(&mut model)?;
    Ok(model)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub episodes: Option<usize>,
    pub inner_steps: Option<usize>,
    pub shot: Option<usize>,
}

/// Evaluation settings: first order (no meta-gradient is needed) with the
/// configured evaluation step count.
pub fn eval_inner(cfg: &RunConfig, steps: Option<usize>) -> InnerConfig {
    InnerConfig {
        steps: steps.unwrap_or(cfg.inner.eval_steps),
        first_order: true,
        ..cfg.inner_config()
    }
}

/// Held-out evaluation episodes drawn from the test pool.
pub fn eval_episodes(cfg: &RunConfig, n: usize, shot: usize) -> Result<Vec<Episode>, TaskError> {
    sample_episodes(cfg, Split::Test, &mut stream_rng(cfg.seed, STREAM_EVAL), n, shot, 0)
}

pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, opts: &EvalOptions, threads: usize) -> Result<EvalReport, RunError> {
    let model = load_model(cfg, checkpoint)?;
    let episodes = eval_episodes(
        cfg,
        opts.episodes.unwrap_or(cfg.eval.episodes),
        opts.shot.unwrap_or(cfg.task.shot),
    )?;
    Ok(evaluate(&model, &episodes, &eval_inner(cfg, opts.inner_steps), threads)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub candidates: Vec<Candidate>,
    pub members: Vec<String>,
    pub validation_score: f64,
    pub trace: Vec<TraceEntry>,
    pub best_single: String,
    pub best_single_loss: MeanCi,
    pub best_single_accuracy: Option<MeanCi>,
    pub ensemble_loss: MeanCi,
    pub ensemble_accuracy: Option<MeanCi>,
}

fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let read = std::fs::read_dir(dir).map_err(|_| RunError::EmptyDir(dir.to_path_buf()))?;
    let mut paths: Vec<PathBuf> = read
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunError::EmptyDir(dir.to_path_buf()));
    }
    Ok(paths)
}

/// Predictions of every model on every episode, one worker per model chunk.
fn all_predictions(
    models: &[Model],
    episodes: &[Episode],
    inner: &InnerConfig,
    threads: usize,
) -> Result<Vec<Vec<Tensor>>, MetaError> {
    let threads = threads.clamp(1, models.len().max(1));
    let chunk = models.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<Vec<Tensor>>, MetaError>> = std::thread::scope(|s| {
        let handles: Vec<_> = models
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|m| member_predictions(m, episodes, inner)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(models.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Greedy snapshot-ensemble selection over the checkpoints in `dir`, scored
/// on validation episodes and reported on held-out episodes.
pub fn run_ensemble(cfg: &RunConfig, dir: &Path, threads: usize) -> Result<EnsembleReport, RunError> {
    let paths = list_checkpoints(dir)?;
    let mut models = Vec::with_capacity(paths.len());
    let mut candidates = Vec::with_capacity(paths.len());
    for p in &paths {
        let ck = Checkpoint::load(p)?;
        let mut model = build_model(cfg)?;
        ck.restore_into(&mut model)?;
        models.push(model);
        candidates.push(Candidate {
            id: p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            iteration: ck.iteration,
            score: f64::NAN,
        });
    }
    let classification = cfg.experiment == Experiment::Glyph;
    let inner = eval_inner(cfg, None);
    let val = sample_episodes(
        cfg,
        Split::Train,
        &mut stream_rng(cfg.seed, STREAM_VALIDATION),
        cfg.ensemble.validation_episodes,
        cfg.task.shot,
        0,
    )?;
    let val_preds = all_predictions(&models, &val, &inner, threads)?;
    for (c, preds) in candidates.iter_mut().zip(&val_preds) {
        let (losses, accs) = score_predictions(&[preds.as_slice()], &val, classification)?;
        c.score = selection_score(&losses, accs.as_deref());
    }

    let capped = cap_candidates(candidates.clone(), cfg.ensemble.max_candidates);
    let index_of = |id: &str| candidates.iter().position(|c| c.id == id).expect("capped id exists");
    let capped_models: Vec<usize> = capped.iter().map(|c| index_of(&c.id)).collect();
    let mut scoring_error = None;
    let selection = greedy_select(&capped, |subset| {
        let members: Vec<&[Tensor]> = subset.iter().map(|&i| val_preds[capped_models[i]].as_slice()).collect();
        match score_predictions(&members, &val, classification) {
            Ok((losses, accs)) => selection_score(&losses, accs.as_deref()),
            Err(e) => {
                scoring_error.get_or_insert(e);
                f64::NEG_INFINITY
            }
        }
    })?;
    if let Some(e) = scoring_error {
        return Err(e.into());
    }

    let test = eval_episodes(cfg, cfg.eval.episodes, cfg.task.shot)?;
    let member_idx: Vec<usize> = selection.members.iter().map(|&i| capped_models[i]).collect();
    let best_idx = capped_models[selection.members[0]];
    let mut wanted = member_idx.clone();
    if !wanted.contains(&best_idx) {
        wanted.push(best_idx);
    }
    let chosen: Vec<Model> = wanted.iter().map(|&i| models[i].clone()).collect();
    let test_preds = all_predictions(&chosen, &test, &inner, threads)?;
    let ens: Vec<&[Tensor]> = (0..member_idx.len()).map(|k| test_preds[k].as_slice()).collect();
    let (ens_losses, ens_accs) = score_predictions(&ens, &test, classification)?;
    let best_pos = wanted.iter().position(|&i| i == best_idx).expect("best model evaluated");
    let (best_losses, best_accs) = score_predictions(&[test_preds[best_pos].as_slice()], &test, classification)?;

    let report = EnsembleReport {
        members: member_idx.iter().map(|&i| candidates[i].id.clone()).collect(),
        validation_score: selection.score,
        trace: selection.trace,
        best_single: candidates[best_idx].id.clone(),
        best_single_loss: MeanCi::of(&best_losses),
        best_single_accuracy: best_accs.as_deref().map(MeanCi::of),
        ensemble_loss: MeanCi::of(&ens_losses),
        ensemble_accuracy: ens_accs.as_deref().map(MeanCi::of),
        candidates,
    };
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join("ensemble.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io_err(&path))?;
    Ok(report)
}
