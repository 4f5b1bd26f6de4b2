//! Integrated Gradients over the fused embedding a classifier head consumes.

use ovo_core::autodiff::{Tape, Var};
use ovo_core::eval::{contiguous_layout, integrated_gradients, modality_aggregate};
use ovo_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::data::RunData;
use crate::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityAttribution {
    pub modalities: Vec<String>,
    /// Mean over patients of each modality's share of absolute attribution.
    pub scores: Vec<f64>,
    pub patients: usize,
    pub steps: usize,
    /// Largest completeness residual seen.
    pub max_residual: f64,
}

/// Attributes the head output of each patient in `indices` to its embedding
/// slices, from an all-zero baseline. Multilabel heads are attributed through
/// the mean of their logits.
pub fn attribute(model: &Model, data: &RunData, indices: &[usize], steps: usize) -> Result<ModalityAttribution> {
    if indices.is_empty() {
        return Err(Error::Contract("attribution needs at least one patient".into()));
    }
    let emb = model.embeddings(&data.inputs(indices)?)?;
    let n = model.embedding_dim();
    let layout = contiguous_layout(&model.modalities.iter().map(|m| (m.clone(), n)).collect::<Vec<_>>());
    let mut frozen = model.store.clone();
    for p in frozen.iter_mut() {
        p.trainable = false;
    }
    let f = |tape: &mut Tape, x: Var| -> Result<Var> {
        let bind = frozen.bind(tape);
        let logits = model.head_logits(tape, &bind, x)?;
        let width = tape.shape(logits)[1];
        if width == 1 {
            return Ok(logits);
        }
        let cols = (0..width).map(|c| tape.slice_cols(logits, c, 1)).collect::<Result<Vec<_>>>()?;
        let sum = tape.add_all(&cols)?;
        Ok(tape.scale(sum, 1.0 / width as f64))
    };
    let k = model.modalities.len();
    let mut scores = vec![0.0; k];
    let mut max_residual: f64 = 0.0;
    let mut used = 0;
    let baseline = vec![0.0; k * n];
    for row in 0..indices.len() {
        let input: Vec<f64> = emb.iter().flat_map(|e| e.row(row).iter().copied()).collect();
        let report = integrated_gradients(&f, &input, &baseline, steps)?;
        max_residual = max_residual.max(report.completeness_residual);
        match modality_aggregate(&report, &layout) {
            Ok(share) => {
                scores.iter_mut().zip(share).for_each(|(s, v)| *s += v);
                used += 1;
            }
            // a patient whose attributions all vanish carries no ranking information
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every patient has zero attribution".into()));
    }
    scores.iter_mut().for_each(|s| *s /= used as f64);
    Ok(ModalityAttribution {
        modalities: model.modalities.clone(),
        scores,
        patients: used,
        steps,
        max_residual,
    })
}
