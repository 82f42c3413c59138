use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::tasks::{accuracy, Episode};

use super::inner::{inner_loop, InnerConfig};
use super::model::Model;
use super::MetaError;

/// Mean and 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
}

impl MeanCi {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let ci95 = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, ci95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub inner_steps: usize,
    pub loss: MeanCi,
    pub accuracy: Option<MeanCi>,
}

impl EvalReport {
    /// `mean ± ci` row; accuracy in percent for classification.
    pub fn table_row(&self, label: &str) -> String {
        match self.accuracy {
            Some(a) => format!(
                "| {label} | {:.2}% ± {:.2}% | loss {:.4} ± {:.4} |",
                100.0 * a.mean,
                100.0 * a.ci95,
                self.loss.mean,
                self.loss.ci95
            ),
            None => format!("| {label} | {:.4} ± {:.4} |", self.loss.mean, self.loss.ci95),
        }
    }
}

/// Adapts to the episode and returns the query outputs: raw values for
/// regression, class probabilities for classification.
pub fn adapt_and_predict(model: &Model, episode: &Episode, cfg: &InnerConfig) -> Result<Tensor, MetaError> {
    let g = Graph::new();
    let params = model.bind(&g, false, false);
    let cfg = InnerConfig {
        first_order: true,
        ..*cfg
    };
    let adapted = inner_loop(model, &g, &params, episode, &cfg)?;
    let out = adapted.test_output;
    Ok(if model.is_classification() {
        (*g.no_grad(|| out.softmax(1)).value()).clone()
    } else {
        (*out.value()).clone()
    })
}

/// Query loss (and accuracy) of one adapted episode, without meta-gradients.
pub fn evaluate_episode(model: &Model, episode: &Episode, cfg: &InnerConfig) -> Result<(f64, Option<f64>), MetaError> {
    let g = Graph::new();
    let params = model.bind(&g, false, false);
    let cfg = InnerConfig {
        first_order: true,
        ..*cfg
    };
    let adapted = inner_loop(model, &g, &params, episode, &cfg)?;
    let acc = model
        .is_classification()
        .then(|| accuracy(&adapted.test_output.value(), &episode.test_y));
    Ok((adapted.test_loss.item(), acc))
}

/// Nearest-centroid accuracy on the query set using the model's frozen
/// embedding: each class is the mean embedded support example, and queries
/// take the label of the closest centroid in Euclidean distance.
pub fn centroid_accuracy(model: &Model, episode: &Episode) -> f64 {
    let g = Graph::new();
    let params = model.bind(&g, false, false);
    let (support, query) = g.no_grad(|| {
        (
            model.embed(&params, g.constant(episode.train_x.clone())).value(),
            model.embed(&params, g.constant(episode.test_x.clone())).value(),
        )
    });
    let way = episode.way;
    let (rows, dim) = support.dims2();
    let mut centroids = vec![0.0; way * dim];
    let mut counts = vec![0usize; way];
    for r in 0..rows {
        let label = (0..way).find(|&k| episode.train_y.at(r, k) > 0.5).expect("one-hot label");
        counts[label] += 1;
        for j in 0..dim {
            centroids[label * dim + j] += support.at(r, j);
        }
    }
    for (k, &n) in counts.iter().enumerate() {
        for c in &mut centroids[k * dim..(k + 1) * dim] {
            *c /= n.max(1) as f64;
        }
    }
    let (qrows, _) = query.dims2();
    let correct = (0..qrows)
        .filter(|&r| {
            let dist = |k: usize| (0..dim).map(|j| (query.at(r, j) - centroids[k * dim + j]).powi(2)).sum::<f64>();
            let pred = (0..way).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).expect("way >= 1");
            episode.test_y.at(r, pred) > 0.5
        })
        .count();
    correct as f64 / qrows as f64
}

/// Mean ± 95% CI of query loss (and accuracy) over `episodes`.
pub fn evaluate(model: &Model, episodes: &[Episode], cfg: &InnerConfig, threads: usize) -> Result<EvalReport, MetaError> {
    if episodes.is_empty() {
        return Err(MetaError::EmptyBatch);
    }
    let threads = threads.clamp(1, episodes.len());
    let results: Vec<(f64, Option<f64>)> = if threads == 1 {
        episodes
            .iter()
            .map(|e| evaluate_episode(model, e, cfg))
            .collect::<Result<_, _>>()?
    } else {
        let chunk = episodes.len().div_ceil(threads);
        let parts: Vec<Result<Vec<_>, MetaError>> = std::thread::scope(|s| {
            let handles: Vec<_> = episodes
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|e| evaluate_episode(model, e, cfg)).collect()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("eval worker panicked")).collect()
        });
        let mut out = Vec::with_capacity(episodes.len());
        for p in parts {
            out.extend(p?);
        }
        out
    };
    let losses: Vec<f64> = results.iter().map(|r| r.0).collect();
    let accs: Vec<f64> = results.iter().filter_map(|r| r.1).collect();
    Ok(EvalReport {
        episodes: episodes.len(),
        inner_steps: cfg.steps,
        loss: MeanCi::of(&losses),
        accuracy: (!accs.is_empty()).then(|| MeanCi::of(&accs)),
    })
}
