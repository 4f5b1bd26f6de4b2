//! Contrastive pre-training and the three fine-tuning regimes.

use ovo_core::autodiff::{rng, Optimizer, Tape, Tensor};
use ovo_core::eval::{top5_alignment_accuracy, AlignmentCorpus, MetricsRecord};
use ovo_core::fusion::{class_weights_from_counts, multilabel_ce, normalize_lambdas, weighted_bce, ClassWeights, Task};
use ovo_core::{Error, Result};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::config::{LambdaSource, Regime, RunConfig};
use crate::data::{to_f64, RunData};
use crate::model::{Model, ENCODER_PREFIX};

/// Offset separating the batch-order stream from the initialization stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546_4c45;

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// λ after every optimizer step; empty for two modalities.
    pub lambda_trace: Vec<Vec<f64>>,
    /// Loss on the whole pre-training pool before the first and after the last step.
    pub initial_pool_loss: f64,
    pub final_pool_loss: f64,
    /// Top-5 alignment on patients outside the pre-training pool.
    pub alignment_top5: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Parameters restored to the best validation epoch.
    pub model: Model,
    pub checkpoint: Checkpoint,
    /// Test-split metrics of the restored model.
    pub metrics: MetricsRecord,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
    pub encoder_fingerprint_before: String,
    pub encoder_fingerprint_after: String,
}

fn batches(indices: &[usize], batch_size: usize, r: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(r);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn diverged(epoch: usize, last: Option<f64>) -> Error {
    Error::Divergence {
        epoch,
        last_finite_loss: last,
    }
}

fn pool_loss(model: &Model, inputs: &[Tensor], beta: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bind = model.store.bind(&mut tape);
    let vars = Model::constants(&mut tape, inputs);
    let loss = model.contrastive_loss(&mut tape, &bind, &vars, beta)?;
    Ok(tape.item(loss))
}

/// Top-5 alignment of `model`'s embeddings over `indices`.
pub fn alignment(model: &Model, data: &RunData, indices: &[usize]) -> Result<f64> {
    let emb = model.embeddings(&data.inputs(indices)?)?;
    let named: Vec<(String, Tensor)> = data.modalities.iter().cloned().zip(emb).collect();
    top5_alignment_accuracy(&AlignmentCorpus::from_matrices(&data.patient_ids(indices), &named)?)
}

/// Trains encoders, τ and (for three or more modalities) λ on the pre-training pool.
pub fn pretrain(cfg: &RunConfig, data: &RunData) -> Result<PretrainOutcome> {
    if cfg.regime != Regime::ContrastivePretrain {
        return Err(Error::Config(format!("pretrain needs the contrastive regime, got {}", cfg.regime.as_str())));
    }
    let mut model = Model::build(cfg, data, None)?;
    let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let pool = &data.split.pretrain;
    let beta = cfg.lambda_entropy_weight;
    let pool_inputs = data.inputs(pool)?;
    let initial_pool_loss = pool_loss(&model, &pool_inputs, beta)?;
    let mut shuffle = rng(cfg.seed ^ SHUFFLE_STREAM);
    let mut epoch_losses = Vec::new();
    let mut lambda_trace = Vec::new();
    let mut last = initial_pool_loss.is_finite().then_some(initial_pool_loss);
    for epoch in 0..cfg.pretrain_epochs() {
        let mut total = 0.0;
        let mut steps = 0;
        // contrastive terms need at least one in-batch negative
        for batch in batches(pool, cfg.batch_size, &mut shuffle).into_iter().filter(|b| b.len() >= 2) {
            let inputs = data.inputs(&batch)?;
            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let vars = Model::constants(&mut tape, &inputs);
            let loss = model.contrastive_loss(&mut tape, &bind, &vars, beta)?;
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(diverged(epoch, last));
            }
            last = Some(value);
            tape.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&tape, &bind);
            opt.step(&mut model.store);
            if let Some(l) = model.lambda_values() {
                lambda_trace.push(l);
            }
            total += value;
            steps += 1;
        }
        if steps == 0 {
            return Err(Error::Config("pre-training pool yields no batch of two or more patients".into()));
        }
        epoch_losses.push(total / steps as f64);
    }
    let final_pool_loss = pool_loss(&model, &pool_inputs, beta)?;
    if !final_pool_loss.is_finite() {
        return Err(diverged(cfg.pretrain_epochs(), last));
    }
    let alignment_top5 = alignment(&model, data, &data.held_out())?;
    let checkpoint = Checkpoint::capture(cfg, &model, cfg.pretrain_epochs(), None);
    Ok(PretrainOutcome {
        model,
        checkpoint,
        epoch_losses,
        lambda_trace,
        initial_pool_loss,
        final_pool_loss,
        alignment_top5,
    })
}

fn require_matching<'a>(cfg: &RunConfig, pretrained: Option<&'a Checkpoint>) -> Result<&'a Checkpoint> {
    let ckpt = pretrained.ok_or_else(|| {
        Error::Config(format!("{} needs a contrastive checkpoint", cfg.regime.as_str()))
    })?;
    if ckpt.config.regime != Regime::ContrastivePretrain {
        return Err(Error::Config("checkpoint does not come from contrastive pre-training".into()));
    }
    if ckpt.config.modalities != cfg.modalities {
        return Err(Error::Config(format!(
            "checkpoint modalities {:?} differ from run modalities {:?}",
            ckpt.config.modalities, cfg.modalities
        )));
    }
    Ok(ckpt)
}

/// Gate weights for the mLSTM regime.
pub fn gate_lambdas(cfg: &RunConfig, pretrained: Option<&Checkpoint>) -> Result<Vec<f64>> {
    match &cfg.lambda_source {
        LambdaSource::Literal(l) => normalize_lambdas(l).map_err(|e| Error::Config(e.to_string())),
        LambdaSource::Learned => require_matching(cfg, pretrained)?
            .lambda
            .clone()
            .ok_or_else(|| Error::Config("checkpoint carries no lambdas".into())),
    }
}

/// Test-set style metrics for `model` on `indices`.
pub fn evaluate(model: &Model, data: &RunData, task: Task, seed: u64, indices: &[usize]) -> Result<MetricsRecord> {
    let scores = model.predict(&data.inputs(indices)?)?;
    let labels = data.labels(task, indices);
    match task {
        Task::Binary => MetricsRecord::binary(task.as_str(), seed, scores.data(), &labels),
        Task::Multilabel => MetricsRecord::multilabel(task.as_str(), seed, &scores, &labels),
    }
}

fn class_weights(cfg: &RunConfig, data: &RunData) -> Result<ClassWeights> {
    if cfg.task != Task::Binary || !cfg.class_weighting {
        return Ok(ClassWeights::default());
    }
    let labels = data.labels(Task::Binary, &data.split.finetune.train);
    let pos = labels.iter().filter(|&&l| l).count();
    class_weights_from_counts(pos, labels.len() - pos)
}

/// Trains a classifier under `cfg.regime` with early stopping on validation AUROC.
///
/// Stops once `max(patience, 1)` consecutive epochs fail to beat the best
/// validation AUROC, then restores the best epoch's parameters.
pub fn finetune(cfg: &RunConfig, data: &RunData, pretrained: Option<&Checkpoint>) -> Result<FinetuneOutcome> {
    let gate = match cfg.regime {
        Regime::ContrastivePretrain => {
            return Err(Error::Config("finetune does not run the contrastive regime".into()));
        }
        Regime::Mlstm => Some(gate_lambdas(cfg, pretrained)?),
        _ => None,
    };
    let mut model = Model::build(cfg, data, gate)?;
    model.store.set_trainable_prefix("tau", false);
    model.store.set_trainable_prefix("lambda", false);
    if cfg.regime == Regime::FrozenFinetune {
        let ckpt = require_matching(cfg, pretrained)?;
        ckpt.load_into(&mut model, ENCODER_PREFIX)?;
        model.store.set_trainable_prefix(ENCODER_PREFIX, false);
    }
    let encoder_fingerprint_before = model.store.fingerprint(ENCODER_PREFIX);

    let weights = class_weights(cfg, data)?;
    let opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let split = &data.split.finetune;
    let val_inputs = data.inputs(&split.val)?;
    let val_labels = data.labels(cfg.task, &split.val);
    let mut shuffle = rng(cfg.seed ^ SHUFFLE_STREAM);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    let mut stale = 0;
    let mut last = None;
    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        let mut steps = 0;
        for batch in batches(&split.train, cfg.batch_size, &mut shuffle) {
            let inputs = data.inputs(&batch)?;
            let targets = to_f64(&data.labels(cfg.task, &batch));
            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let vars = Model::constants(&mut tape, &inputs);
            let logits = model.logits(&mut tape, &bind, &vars)?;
            let loss = match cfg.task {
                Task::Binary => weighted_bce(&mut tape, logits, &targets, weights)?,
                Task::Multilabel => multilabel_ce(&mut tape, logits, &targets)?,
            };
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(diverged(epoch, last));
            }
            last = Some(value);
            tape.backward(loss)?;
            model.store.zero_grads();
            model.store.accumulate_grads(&tape, &bind);
            opt.step(&mut model.store);
            total += value;
            steps += 1;
        }
        let scores = model.predict(&val_inputs)?;
        let val = match cfg.task {
            Task::Binary => MetricsRecord::binary("val", cfg.seed, scores.data(), &val_labels)?,
            Task::Multilabel => MetricsRecord::multilabel("val", cfg.seed, &scores, &val_labels)?,
        }
        .auroc;
        history.push(EpochRecord {
            epoch,
            train_loss: total / steps.max(1) as f64,
            val_auroc: val,
        });
        if best.as_ref().is_none_or(|b| val > b.1) {
            best = Some((epoch, val, model.store.snapshot()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                break;
            }
        }
    }
    let (best_epoch, best_val, snapshot) = best.expect("max_epochs is at least 1");
    model.store.restore(&snapshot);
    let metrics = evaluate(&model, data, cfg.task, cfg.seed, &split.test)?;
    let checkpoint = Checkpoint::capture(cfg, &model, best_epoch, Some(best_val));
    Ok(FinetuneOutcome {
        encoder_fingerprint_after: model.store.fingerprint(ENCODER_PREFIX),
        model,
        checkpoint,
        metrics,
        best_epoch,
        epochs_run: history.len(),
        history,
        encoder_fingerprint_before,
    })
}
