use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::TaskError;

/// One few-shot task: a support ("train") set and a query ("test") set.
///
/// Regression episodes have `way == 1`; their leading extents are `shot` and
/// `query`. Classification episodes hold `way * shot` train rows and
/// `way * query` test rows with one-hot targets of width `way`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EpisodeRecord", into = "EpisodeRecord")]
pub struct Episode {
    pub train_x: Tensor,
    pub train_y: Tensor,
    pub test_x: Tensor,
    pub test_y: Tensor,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
    pub task_id: u64,
}

impl Episode {
    pub fn new(
        train: (Tensor, Tensor),
        test: (Tensor, Tensor),
        way: usize,
        shot: usize,
        query: usize,
        task_id: u64,
    ) -> Result<Self, TaskError> {
        let episode = Self {
            train_x: train.0,
            train_y: train.1,
            test_x: test.0,
            test_y: test.1,
            way,
            shot,
            query,
            task_id,
        };
        episode.validate()?;
        Ok(episode)
    }

    pub fn is_classification(&self) -> bool {
        self.way > 1
    }

    pub fn train_rows(&self) -> usize {
        self.way * self.shot
    }

    pub fn test_rows(&self) -> usize {
        self.way * self.query
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |what: String| Err(TaskError::MalformedEpisode(what));
        if self.way == 0 || self.shot == 0 || self.query == 0 {
            return bad("way, shot and query must be positive".into());
        }
        for (name, t, rows) in [
            ("train_x", &self.train_x, self.train_rows()),
            ("train_y", &self.train_y, self.train_rows()),
            ("test_x", &self.test_x, self.test_rows()),
            ("test_y", &self.test_y, self.test_rows()),
        ] {
            if t.rank() != 2 || t.shape()[0] != rows {
                return bad(format!("{name} has shape {:?}, expected {rows} rows", t.shape()));
            }
        }
        if self.train_x.shape()[1] != self.test_x.shape()[1] {
            return bad("train and test feature widths differ".into());
        }
        if self.is_classification() {
            for (name, y, per_class) in [
                ("train_y", &self.train_y, self.shot),
                ("test_y", &self.test_y, self.query),
            ] {
                if y.shape()[1] != self.way {
                    return bad(format!("{name} one-hot width {} != way {}", y.shape()[1], self.way));
                }
                let mut counts = vec![0usize; self.way];
                for row in y.data().chunks_exact(self.way) {
                    let hot: Vec<usize> = (0..self.way).filter(|&k| row[k] == 1.0).collect();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    if hot.len() != 1 || zeros != self.way - 1 {
                        return bad(format!("{name} row is not one-hot"));
                    }
                    counts[hot[0]] += 1;
                }
                if counts.iter().any(|&c| c != per_class) {
                    return bad(format!("{name} class counts {counts:?}, expected {per_class} each"));
                }
            }
        } else if self.train_y.shape()[1] != self.test_y.shape()[1] {
            return bad("train and test target widths differ".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("episode serialisation cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        serde_json::from_str(text).map_err(|e| TaskError::MalformedEpisode(e.to_string()))
    }
}

/// On-disk JSON layout of an episode: shapes plus flat row-major values.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeRecord {
    task_id: u64,
    way: usize,
    shot: usize,
    query: usize,
    train_x: TensorRecord,
    train_y: TensorRecord,
    test_x: TensorRecord,
    test_y: TensorRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TensorRecord {
    fn into_tensor(self, name: &str) -> Result<Tensor, TaskError> {
        let n: usize = self.shape.iter().product();
        if self.shape.is_empty() || self.shape.contains(&0) || n != self.values.len() {
            return Err(TaskError::MalformedEpisode(format!(
                "{name}: shape {:?} does not describe {} values",
                self.shape,
                self.values.len()
            )));
        }
        Ok(Tensor::new(&self.shape, self.values))
    }
}

impl From<&Tensor> for TensorRecord {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            values: t.data().to_vec(),
        }
    }
}

impl From<Episode> for EpisodeRecord {
    fn from(e: Episode) -> Self {
        Self {
            task_id: e.task_id,
            way: e.way,
            shot: e.shot,
            query: e.query,
            train_x: (&e.train_x).into(),
            train_y: (&e.train_y).into(),
            test_x: (&e.test_x).into(),
            test_y: (&e.test_y).into(),
        }
    }
}

impl TryFrom<EpisodeRecord> for Episode {
    type Error = TaskError;

    fn try_from(r: EpisodeRecord) -> Result<Self, TaskError> {
        Episode::new(
            (r.train_x.into_tensor("train_x")?, r.train_y.into_tensor("train_y")?),
            (r.test_x.into_tensor("test_x")?, r.test_y.into_tensor("test_y")?),
            r.way,
            r.shot,
            r.query,
            r.task_id,
        )
    }
}
