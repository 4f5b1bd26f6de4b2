//! Cohort views used by training: modality tensors in run order, labels and splits.

use ovo_core::autodiff::Tensor;
use ovo_core::cohort::{pretrain_pool, ProtocolSplit, SyntheticCohort};
use ovo_core::encoders::ModalityKind;
use ovo_core::fusion::Task;
use ovo_core::{Error, Result};

use crate::config::RunConfig;

/// The slice of a cohort one run sees.
#[derive(Clone, Debug)]
pub struct RunData {
    pub cohort: SyntheticCohort,
    /// Modality ids in run order.
    pub modalities: Vec<String>,
    pub split: ProtocolSplit,
}

impl RunData {
    pub fn new(cfg: &RunConfig, cohort: SyntheticCohort) -> Result<Self> {
        for m in &cfg.modalities {
            if cohort.modality(m).is_none() {
                let known: Vec<&str> = cohort.modalities.iter().map(|m| m.name.as_str()).collect();
                return Err(Error::Config(format!("cohort has no modality `{m}` (has {known:?})")));
            }
        }
        let split = pretrain_pool(&cohort, cfg.pool_fraction, cfg.split_seed)?;
        Ok(Self {
            cohort,
            modalities: cfg.modalities.clone(),
            split,
        })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        Self::new(cfg, cfg.cohort.load()?)
    }

    pub fn kind(&self, modality: &str) -> ModalityKind {
        self.cohort.modality(modality).expect("checked in new").kind
    }

    /// Per-step width for sequences, feature width otherwise.
    pub fn input_dim(&self, modality: &str) -> usize {
        let values = &self.cohort.modality(modality).expect("checked in new").values;
        *values.shape().last().expect("nonempty shape")
    }

    /// Each run modality's rows for `indices`, in run order.
    pub fn inputs(&self, indices: &[usize]) -> Result<Vec<Tensor>> {
        self.modalities
            .iter()
            .map(|m| self.cohort.modality(m).expect("checked in new").values.select_rows(indices))
            .collect()
    }

    pub fn num_outputs(&self, task: Task) -> usize {
        match task {
            Task::Binary => 1,
            Task::Multilabel => self.cohort.num_multilabels(),
        }
    }

    /// Row-major `[len(indices), outputs]` flags.
    pub fn labels(&self, task: Task, indices: &[usize]) -> Vec<bool> {
        match task {
            Task::Binary => indices.iter().map(|&i| self.cohort.binary[i]).collect(),
            Task::Multilabel => {
                let l = self.cohort.num_multilabels();
                indices
                    .iter()
                    .flat_map(|&i| self.cohort.multilabels[i * l..(i + 1) * l].iter().copied())
                    .collect()
            }
        }
    }

    /// Patients never seen by contrastive pre-training.
    pub fn held_out(&self) -> Vec<usize> {
        let f = &self.split.finetune;
        let mut all: Vec<usize> = f.train.iter().chain(&f.val).chain(&f.test).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn patient_ids(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.cohort.patient_ids[i].clone()).collect()
    }
}

pub fn to_f64(flags: &[bool]) -> Vec<f64> {
    flags.iter().map(|&b| b as u8 as f64).collect()
}
