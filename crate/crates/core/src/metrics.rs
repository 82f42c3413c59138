//! Training metrics as JSON lines. Wall-clock time goes to a separate
//! timing log so the metrics file itself is reproducible.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub accuracy: Option<f64>,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub iteration: u64,
    pub wall_ms: f64,
}

/// Appends one JSON object per line, flushing after each write.
pub struct JsonlWriter {
    file: File,
}

impl JsonlWriter {
    /// Opens `path`, keeping only records with `iteration <= keep_through`
    /// (used on resume so a crashed run's tail is not duplicated).
    pub fn open(path: &Path, keep_through: u64) -> std::io::Result<Self> {
        if path.exists() {
            let kept: Vec<String> = BufReader::new(File::open(path)?)
                .lines()
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .filter(|l| record_iteration(l).is_some_and(|i| i <= keep_through))
                .collect();
            let mut f = File::create(path)?;
            for l in kept {
                writeln!(f, "{l}")?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(self.file, "{line}")?;
        self.file.flush()
    }
}

fn record_iteration(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("iteration")?.as_u64()
}

pub fn read_metrics(path: &Path) -> std::io::Result<Vec<MetricsRecord>> {
    BufReader::new(File::open(path)?)
        .lines()
        .map(|l| serde_json::from_str(&l?).map_err(std::io::Error::other))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(i: u64) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            train_loss: 0.1 * i as f64 + 1.0 / 3.0,
            test_loss: 2.0,
            accuracy: None,
            lr: 1e-3,
            grad_norm: 0.5,
        }
    }

    #[test]
    fn records_round_trip_and_resume_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = JsonlWriter::open(&path, 0).unwrap();
        for i in 1..=5 {
            w.write(&rec(i)).unwrap();
        }
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), (1..=5).map(rec).collect::<Vec<_>>());
        let mut w = JsonlWriter::open(&path, 3).unwrap();
        w.write(&rec(4)).unwrap();
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), (1..=4).map(rec).collect::<Vec<_>>());
    }
}
