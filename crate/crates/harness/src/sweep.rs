//! Grid runs over modality subsets, regimes and seeds.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use ovo_core::cohort::SyntheticCohort;
use ovo_core::eval::MetricsRecord;
use ovo_core::fusion::Task;
use ovo_core::stats::{mean, sample_std};
use ovo_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Regime, RunConfig};
use crate::data::RunData;
use crate::train::{finetune, pretrain, PretrainOutcome};

/// All subsets of size two to five of exactly five modalities: size first,
/// then lexicographic by position in `modalities`.
pub fn enumerate_subsets(modalities: &[String]) -> Result<Vec<Vec<String>>> {
    if modalities.len() != 5 {
        return Err(Error::Contract(format!("expected 5 modalities, got {}", modalities.len())));
    }
    if modalities.iter().collect::<HashSet<_>>().len() != 5 {
        return Err(Error::Contract(format!("duplicate modality in {modalities:?}")));
    }
    let mut lists: Vec<Vec<usize>> = (0u32..32)
        .filter(|m| m.count_ones() >= 2)
        .map(|m| (0..5).filter(|i| m & (1 << i) != 0).collect())
        .collect();
    lists.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(lists
        .into_iter()
        .map(|l| l.into_iter().map(|i| modalities[i].clone()).collect())
        .collect())
}

pub fn subset_key(subset: &[String]) -> String {
    subset.join("+")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub subset: Vec<String>,
    pub regime: Regime,
    pub task: Task,
    pub seed: u64,
    pub status: RunStatus,
    /// Test metrics of a fine-tuning run.
    pub metrics: Option<MetricsRecord>,
    /// Held-out top-5 alignment of the pre-trained encoders.
    pub alignment_top5: Option<f64>,
    pub pretrain_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// `None` for a single value.
    pub std: Option<f64>,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            mean: mean(values)?,
            std: sample_std(values),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub subset: String,
    pub regime: Regime,
    pub task: Task,
    /// Successful seeds; always at least one.
    pub n_seeds: usize,
    pub n_failed: usize,
    pub auroc: Option<Summary>,
    pub auprc: Option<Summary>,
    pub alignment_top5: Option<Summary>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<AggregateRow>,
}

/// Mean and sample std per (subset, regime, task) over successful rows, in
/// first-appearance order. Cells without a success get no aggregate.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, Regime, Task)> = Vec::new();
    let mut cells: HashMap<(String, Regime, Task), Vec<&SweepRow>> = HashMap::new();
    for r in rows {
        let key = (subset_key(&r.subset), r.regime, r.task);
        if !cells.contains_key(&key) {
            order.push(key.clone());
        }
        cells.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .filter_map(|key| {
            let cell = &cells[&key];
            let ok: Vec<&&SweepRow> = cell.iter().filter(|r| r.status == RunStatus::Ok).collect();
            if ok.is_empty() {
                return None;
            }
            let collect = |f: &dyn Fn(&SweepRow) -> Option<f64>| -> Option<Summary> {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                Summary::of(&v)
            };
            Some(AggregateRow {
                n_seeds: ok.len(),
                n_failed: cell.len() - ok.len(),
                auroc: collect(&|r| r.metrics.as_ref().map(|m| m.auroc)),
                auprc: collect(&|r| r.metrics.as_ref().map(|m| m.auprc)),
                alignment_top5: collect(&|r| r.alignment_top5),
                subset: key.0,
                regime: key.1,
                task: key.2,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub subsets: Vec<Vec<String>>,
    pub regimes: Vec<Regime>,
    pub seeds: Vec<u64>,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.subsets.is_empty() || self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("a sweep needs at least one subset, regime and seed".into()));
        }
        Ok(())
    }
}

/// Optional per-run callback, e.g. for dumping embeddings.
pub type PretrainHook<'a> = dyn FnMut(&RunConfig, &RunData, &PretrainOutcome) -> Result<()> + 'a;

/// Runs the Cartesian product of `plan` on `cohort`. Pre-training happens at
/// most once per (subset, seed) and feeds every regime that needs it. A failed
/// run becomes a failed row; the sweep carries on.
pub fn sweep(
    base: &RunConfig,
    cohort: &SyntheticCohort,
    plan: &SweepPlan,
    mut hook: Option<&mut PretrainHook<'_>>,
) -> Result<SweepResult> {
    plan.validate()?;
    let mut rows = Vec::new();
    for subset in &plan.subsets {
        let sub_cfg = base.with_subset(subset);
        let data = match RunData::new(&sub_cfg, cohort.clone()) {
            Ok(d) => d,
            Err(e) => {
                for &regime in &plan.regimes {
                    for &seed in &plan.seeds {
                        rows.push(failed_row(subset, regime, base.task, seed, &e, 0.0));
                    }
                }
                continue;
            }
        };
        for &seed in &plan.seeds {
            let mut cached: Option<(std::result::Result<PretrainOutcome, String>, f64)> = None;
            let pre = |cached: &mut Option<_>, hook: &mut Option<&mut PretrainHook<'_>>| {
                if cached.is_none() {
                    let t = Instant::now();
                    let cfg = sub_cfg.with_regime(Regime::ContrastivePretrain).with_seed(seed);
                    let out = pretrain(&cfg, &data).and_then(|o| {
                        if let Some(h) = hook.as_mut() {
                            h(&cfg, &data, &o)?;
                        }
                        Ok(o)
                    });
                    *cached = Some((out.map_err(|e| e.to_string()), t.elapsed().as_secs_f64()));
                }
            };
            for &regime in &plan.regimes {
                let cfg = sub_cfg.with_regime(regime).with_seed(seed);
                let start = Instant::now();
                let row = if regime == Regime::ContrastivePretrain {
                    pre(&mut cached, &mut hook);
                    let (out, secs) = cached.as_ref().expect("filled above");
                    match out {
                        Ok(o) => SweepRow {
                            subset: subset.clone(),
                            regime,
                            task: cfg.task,
                            seed,
                            status: RunStatus::Ok,
                            metrics: None,
                            alignment_top5: Some(o.alignment_top5),
                            pretrain_loss: Some(o.final_pool_loss),
                            best_epoch: None,
                            epochs_run: Some(o.epoch_losses.len()),
                            wall_time_s: *secs,
                        },
                        Err(e) => failed_row(subset, regime, cfg.task, seed, e, *secs),
                    }
                } else {
                    let ckpt: std::result::Result<Option<Checkpoint>, String> = if regime.needs_pretraining(&cfg.lambda_source) {
                        pre(&mut cached, &mut hook);
                        match &cached.as_ref().expect("filled above").0 {
                            Ok(o) => Ok(Some(o.checkpoint.clone())),
                            Err(e) => Err(format!("pre-training failed: {e}")),
                        }
                    } else {
                        Ok(None)
                    };
                    match ckpt.and_then(|c| finetune(&cfg, &data, c.as_ref()).map_err(|e| e.to_string())) {
                        Ok(o) => SweepRow {
                            subset: subset.clone(),
                            regime,
                            task: cfg.task,
                            seed,
                            status: RunStatus::Ok,
                            metrics: Some(o.metrics),
                            alignment_top5: None,
                            pretrain_loss: None,
                            best_epoch: Some(o.best_epoch),
                            epochs_run: Some(o.epochs_run),
                            wall_time_s: start.elapsed().as_secs_f64(),
                        },
                        Err(e) => failed_row(subset, regime, cfg.task, seed, &e, start.elapsed().as_secs_f64()),
                    }
                };
                rows.push(row);
            }
        }
    }
    let aggregates = aggregate(&rows);
    Ok(SweepResult { rows, aggregates })
}

fn failed_row(subset: &[String], regime: Regime, task: Task, seed: u64, err: &dyn std::fmt::Display, secs: f64) -> SweepRow {
    SweepRow {
        subset: subset.to_vec(),
        regime,
        task,
        seed,
        status: RunStatus::Failed(err.to_string()),
        metrics: None,
        alignment_top5: None,
        pretrain_loss: None,
        best_epoch: None,
        epochs_run: None,
        wall_time_s: secs,
    }
}
