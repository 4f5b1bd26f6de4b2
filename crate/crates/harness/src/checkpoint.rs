//! JSON checkpoint container. Floats are written with round-trip precision, so a
//! reloaded model reproduces forward outputs bit for bit. Layout documented in
//! `docs/checkpoint-format.md`.

use std::path::Path;

use ovo_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::RunData;
use crate::model::{Fusion, Model};

pub const CHECKPOINT_FORMAT: &str = "ovo-checkpoint v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub tensors: Vec<NamedTensor>,
    /// softmax of the λ logits, present for three or more modalities.
    pub lambda: Option<Vec<f64>>,
    pub tau: f64,
    /// Gate weights of an mLSTM model.
    #[serde(default)]
    pub gate_lambdas: Option<Vec<f64>>,
    pub epoch: usize,
    pub best_validation_auroc: Option<f64>,
}

impl Checkpoint {
    pub fn capture(cfg: &RunConfig, model: &Model, epoch: usize, best_validation_auroc: Option<f64>) -> Self {
        let tensors = model
            .store
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                values: p.tensor.data().to_vec(),
            })
            .collect();
        let gate_lambdas = match &model.fusion {
            Fusion::Gated { lambdas, .. } => Some(lambdas.clone()),
            _ => None,
        };
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.clone(),
            tensors,
            lambda: model.lambda_values(),
            tau: model.tau(),
            gate_lambdas,
            epoch,
            best_validation_auroc,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies every stored tensor whose name starts with `prefix` into `model`.
    /// Returns how many were loaded.
    pub fn load_into(&self, model: &mut Model, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for t in self.tensors.iter().filter(|t| t.name.starts_with(prefix)) {
            model.store.load_values(&t.name, &t.shape, &t.values)?;
            n += 1;
        }
        Ok(n)
    }

    /// Rebuilds the saved model on `data`.
    pub fn restore(&self, data: &RunData) -> Result<Model> {
        let mut model = Model::build(&self.config, data, self.gate_lambdas.clone())?;
        if model.store.len() != self.tensors.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                model.store.len()
            )));
        }
        self.load_into(&mut model, "")?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("unsupported checkpoint format `{}`", c.format)));
        }
        if c.config.hash() != c.config_hash {
            return Err(Error::Parse("checkpoint config hash does not match its config".into()));
        }
        for t in &c.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::Parse(format!("tensor `{}` length disagrees with its shape", t.name)));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
