//! Run configuration, loadable from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ovo_core::autodiff::OptimizerKind;
use ovo_core::cohort::{self, default_modalities, CohortSpec, SyntheticCohort};
use ovo_core::fusion::{normalize_lambdas, Task};
use ovo_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ContrastivePretrain,
    FrozenFinetune,
    SupervisedBaseline,
    Mlstm,
}

impl Regime {
    pub const ALL: [Regime; 4] = [
        Regime::ContrastivePretrain,
        Regime::FrozenFinetune,
        Regime::SupervisedBaseline,
        Regime::Mlstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::ContrastivePretrain => "contrastive_pretrain",
            Regime::FrozenFinetune => "frozen_finetune",
            Regime::SupervisedBaseline => "supervised_baseline",
            Regime::Mlstm => "mlstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime `{s}`")))
    }

    /// Whether the regime consumes a contrastive checkpoint.
    pub fn needs_pretraining(self, lambda: &LambdaSource) -> bool {
        match self {
            Regime::FrozenFinetune => true,
            Regime::Mlstm => matches!(lambda, LambdaSource::Learned),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// Taken from the contrastive checkpoint.
    Learned,
    Literal(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortSource {
    Path(PathBuf),
    Spec(CohortSpec),
}

impl CohortSource {
    pub fn load(&self) -> Result<SyntheticCohort> {
        match self {
            CohortSource::Path(p) => cohort::load(p),
            CohortSource::Spec(s) => cohort::generate(s),
        }
    }
}

fn default_max_epochs() -> usize {
    75
}
fn default_patience() -> usize {
    15
}
fn default_embedding_dim() -> usize {
    16
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}
fn default_pool_fraction() -> f64 {
    cohort::DEFAULT_POOL_FRACTION
}
fn default_tau() -> f64 {
    ovo_core::losses::DEFAULT_TAU
}
fn default_ig_steps() -> usize {
    256
}
fn default_task() -> Task {
    Task::Binary
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    32
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cohort: CohortSource,
    pub modalities: Vec<String>,
    pub regime: Regime,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Pre-training epochs; defaults to `max_epochs`.
    #[serde(default)]
    pub pretrain_epochs: Option<usize>,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub seed: u64,
    #[serde(default = "LambdaSource::learned")]
    pub lambda_source: LambdaSource,
    pub output_dir: PathBuf,
    /// Contrastive checkpoint consumed by frozen fine-tuning and learned-λ mLSTM runs.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden")]
    pub encoder_hidden: Vec<usize>,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    /// LSTM width of the gated fusion; defaults to `embedding_dim`.
    #[serde(default)]
    pub mlstm_hidden: Option<usize>,
    #[serde(default = "default_tau")]
    pub initial_tau: f64,
    /// Weight of an optional `−β·H(λ)` term in the pre-training loss; 0 disables it.
    #[serde(default)]
    pub lambda_entropy_weight: f64,
    #[serde(default = "default_pool_fraction")]
    pub pool_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Inverse-frequency class weights for the binary task.
    #[serde(default = "default_true")]
    pub class_weighting: bool,
    #[serde(default = "default_ig_steps")]
    pub ig_steps: usize,
}

impl LambdaSource {
    fn learned() -> Self {
        LambdaSource::Learned
    }
}

impl RunConfig {
    /// Defaults mirroring the documented run file, on an inline cohort spec.
    pub fn new(spec: CohortSpec, modalities: Vec<String>, regime: Regime, seed: u64) -> Self {
        Self {
            cohort: CohortSource::Spec(spec),
            modalities,
            regime,
            task: default_task(),
            optimizer: default_optimizer(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            pretrain_epochs: None,
            patience: default_patience(),
            seed,
            lambda_source: LambdaSource::Learned,
            output_dir: PathBuf::from("runs"),
            checkpoint: None,
            embedding_dim: default_embedding_dim(),
            encoder_hidden: default_hidden(),
            head_hidden: Vec::new(),
            mlstm_hidden: None,
            initial_tau: default_tau(),
            lambda_entropy_weight: 0.0,
            pool_fraction: default_pool_fraction(),
            split_seed: 0,
            class_weighting: true,
            ig_steps: default_ig_steps(),
        }
    }

    /// A five-modality default roster cohort.
    pub fn default_spec(num_patients: usize, seed: u64) -> CohortSpec {
        CohortSpec::new(num_patients, default_modalities([0.9, 0.7, 0.5, 0.3, 0.1]), seed)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn pretrain_epochs(&self) -> usize {
        self.pretrain_epochs.unwrap_or(self.max_epochs)
    }

    pub fn mlstm_hidden(&self) -> usize {
        self.mlstm_hidden.unwrap_or(self.embedding_dim)
    }

    /// Structural checks that need no files.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let k = self.modalities.len();
        if !(2..=5).contains(&k) {
            return fail(format!("a run uses 2 to 5 modalities, got {k}"));
        }
        let unique: HashSet<&String> = self.modalities.iter().collect();
        if unique.len() != k {
            return fail(format!("duplicate modality in {:?}", self.modalities));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return fail(format!("learning rate {} outside (0, 1)", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.embedding_dim == 0 || self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return fail("model widths must be positive".into());
        }
        if !(self.initial_tau > 0.0) {
            return fail(format!("initial_tau {} must be positive", self.initial_tau));
        }
        if !(self.lambda_entropy_weight >= 0.0) {
            return fail("lambda_entropy_weight must be nonnegative".into());
        }
        if !(self.pool_fraction > 0.0 && self.pool_fraction < 1.0) {
            return fail(format!("pool_fraction {} outside (0, 1)", self.pool_fraction));
        }
        if self.ig_steps < 2 {
            return fail("ig_steps must be at least 2".into());
        }
        if let LambdaSource::Literal(l) = &self.lambda_source {
            if l.len() != k {
                return fail(format!("{} literal lambdas for {k} modalities", l.len()));
            }
            normalize_lambdas(l).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.regime == Regime::Mlstm && self.lambda_source == LambdaSource::Learned && k == 2 {
            return fail("two-modality pre-training learns no lambdas; give literal lambdas for mlstm".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("run config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn with_regime(&self, regime: Regime) -> Self {
        Self {
            regime,
            ..self.clone()
        }
    }

    pub fn with_subset(&self, modalities: &[String]) -> Self {
        let mut c = self.clone();
        c.modalities = modalities.to_vec();
        if let LambdaSource::Literal(l) = &self.lambda_source {
            if l.len() != modalities.len() {
                c.lambda_source = LambdaSource::Learned;
            }
        }
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}
