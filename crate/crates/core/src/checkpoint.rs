//! Checkpoints: a JSON manifest plus a sibling `.bin` file of little-endian
//! f64 arrays. Saving a loaded checkpoint reproduces both files byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::meta::{AdamAmsgrad, AdamConfig, Model};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed checkpoint manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint data is truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements into the data file.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Number of completed outer iterations.
    pub iteration: u64,
    pub seed: u64,
    /// Batches are drawn from one RNG stream per iteration; this is the
    /// stream the next iteration will use.
    pub next_rng_stream: u64,
    /// The run configuration, echoed as TOML.
    pub config: String,
    pub data_file: String,
    pub params: Vec<ArrayRecord>,
    pub optimizer: Option<OptimizerRecord>,
    /// Optimizer moments in parameter order: m, v, v_max per parameter.
    pub optimizer_arrays: Vec<ArrayRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub seed: u64,
    pub config: String,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<AdamAmsgrad>,
}

impl Checkpoint {
    pub fn capture(model: &Model, opt: Option<&AdamAmsgrad>, iteration: u64, seed: u64, config: String) -> Self {
        Self {
            iteration,
            seed,
            config,
            params: model
                .params()
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.value.clone()))
                .collect(),
            optimizer: opt.cloned(),
        }
    }

    /// Copies the stored parameters into `model`, checking names and shapes.
    pub fn restore_into(&self, model: &mut Model) -> Result<(), CheckpointError> {
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(CheckpointError::Architecture(format!(
                "checkpoint has {} parameter tensors, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (i, (name, value)) in self.params.iter().enumerate() {
            let entry = &store.entries()[i];
            if &entry.name != name || entry.value.shape() != value.shape() {
                return Err(CheckpointError::Architecture(format!(
                    "parameter {i}: checkpoint has {name} {:?}, model has {} {:?}",
                    value.shape(),
                    entry.name,
                    entry.value.shape()
                )));
            }
        }
        for (dst, (_, src)) in store.values_mut().into_iter().zip(&self.params) {
            *dst = src.clone();
        }
        Ok(())
    }

    /// Writes `<path>` (manifest) and `<path>.bin` (data).
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let data_path = data_path(path);
        let data_file = data_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut bytes = Vec::new();
        let mut offset = 0;
        let mut push = |name: &str, t: &Tensor, bytes: &mut Vec<u8>| {
            let rec = ArrayRecord {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            };
            for x in t.data() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            offset += t.len();
            rec
        };
        let params = self.params.iter().map(|(n, t)| push(n, t, &mut bytes)).collect();
        let mut optimizer_arrays = Vec::new();
        if let Some(opt) = &self.optimizer {
            for (i, (name, _)) in self.params.iter().enumerate() {
                optimizer_arrays.push(push(&format!("{name}.m"), &opt.m[i], &mut bytes));
                optimizer_arrays.push(push(&format!("{name}.v"), &opt.v[i], &mut bytes));
                optimizer_arrays.push(push(&format!("{name}.v_max"), &opt.v_max[i], &mut bytes));
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            iteration: self.iteration,
            seed: self.seed,
            next_rng_stream: self.iteration + 1,
            config: self.config.clone(),
            data_file,
            params,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerRecord {
                config: o.config,
                step: o.step,
            }),
            optimizer_arrays,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(&data_path, &bytes).map_err(io_err(&data_path))?;
        std::fs::write(path, json).map_err(io_err(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CheckpointError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(manifest.format_version));
        }
        let data_path = path.with_file_name(&manifest.data_file);
        let bytes = std::fs::read(&data_path).map_err(io_err(&data_path))?;
        let read = |rec: &ArrayRecord| -> Result<Tensor, CheckpointError> {
            if rec.shape.is_empty() || rec.shape.contains(&0) {
                return Err(CheckpointError::Manifest {
                    path: path.to_path_buf(),
                    message: format!("array {} has invalid shape {:?}", rec.name, rec.shape),
                });
            }
            let n: usize = rec.shape.iter().product();
            let end = (rec.offset + n) * 8;
            if bytes.len() < end {
                return Err(CheckpointError::Truncated {
                    expected: end,
                    found: bytes.len(),
                });
            }
            let data = bytes[rec.offset * 8..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            Ok(Tensor::new(&rec.shape, data))
        };
        let params = manifest
            .params
            .iter()
            .map(|r| Ok((r.name.clone(), read(r)?)))
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        let optimizer = match &manifest.optimizer {
            None => None,
            Some(rec) => {
                if manifest.optimizer_arrays.len() != 3 * params.len() {
                    return Err(CheckpointError::Manifest {
                        path: path.to_path_buf(),
                        message: "optimizer state does not match the parameter list".into(),
                    });
                }
                let mut opt = AdamAmsgrad::new(rec.config, params.iter().map(|(_, t)| t));
                opt.step = rec.step;
                for (i, chunk) in manifest.optimizer_arrays.chunks_exact(3).enumerate() {
                    opt.m[i] = read(&chunk[0])?;
                    opt.v[i] = read(&chunk[1])?;
                    opt.v_max[i] = read(&chunk[2])?;
                }
                Some(opt)
            }
        };
        Ok(Self {
            iteration: manifest.iteration,
            seed: manifest.seed,
            config: manifest.config,
            params,
            optimizer,
        })
    }
}

/// Data file that accompanies the manifest at `path`.
pub fn data_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".bin");
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::{LayerRole, LayerSpec, ModelSpec, Objective, RateInit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(width: usize) -> Model {
        let spec = ModelSpec {
            input_dim: 1,
            layers: vec![
                LayerSpec {
                    width,
                    role: LayerRole::Tuned,
                },
                LayerSpec {
                    width: 1,
                    role: LayerRole::Tuned,
                },
            ],
            generator: None,
            objective: Objective::Regression,
        };
        Model::new(spec, RateInit::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = model(5);
        let mut opt = AdamAmsgrad::new(AdamConfig::default(), m.params().values());
        opt.step = 7;
        opt.m[0] = opt.m[0].map(|_| 0.1f64.powi(3) / 3.0);
        let ck = Checkpoint::capture(&m, Some(&opt), 42, 9, "seed = 9\n".into());
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        ck.save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded, ck);
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(data_path(&a)).unwrap(), std::fs::read(data_path(&b)).unwrap());
        let ja = std::fs::read_to_string(&a).unwrap().replace("a.json.bin", "");
        let jb = std::fs::read_to_string(&b).unwrap().replace("b.json.bin", "");
        assert_eq!(ja, jb);
    }

    #[test]
    fn restoring_into_a_different_architecture_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        Checkpoint::capture(&model(5), None, 1, 0, String::new()).save(&path).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        let mut same = model(5);
        ck.restore_into(&mut same).unwrap();
        let err = ck.restore_into(&mut model(6)).unwrap_err();
        assert!(matches!(err, CheckpointError::Architecture(_)), "{err}");
    }

    #[test]
    fn truncated_data_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        Checkpoint::capture(&model(3), None, 1, 0, String::new()).save(&path).unwrap();
        let bin = data_path(&path);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::Truncated { .. })));
    }
}
