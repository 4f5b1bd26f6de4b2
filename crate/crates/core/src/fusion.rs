//! Fusion of modality embeddings and the task heads trained on top of them.
//!
//! Two fusion routes exist: row-wise concatenation in a fixed modality order,
//! and the modality-gated LSTM, which walks the modalities as time steps and
//! scales each step's candidate write `I ⊙ C̃` by that modality's `λ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamStore, Tape, Var};
use crate::encoders::{Activation, CellState, LstmCell, Mlp};
use crate::error::{Error, Result};
use crate::losses::ModalityEmbeddingSet;

/// State threaded through the gated unroll.
pub type GatedCellState = CellState;

/// Supplied λ vectors within this distance of the simplex are renormalized.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// `[N, n·m]` concatenation in the set's modality order.
pub fn concat_fuse(tape: &mut Tape, set: &ModalityEmbeddingSet) -> Result<Var> {
    if let [only] = set.embeddings() {
        return Ok(*only);
    }
    tape.concat_cols(set.embeddings())
}

/// Checks that `lambdas` lie on the probability simplex, renormalizing small
/// serialization drift.
pub fn normalize_lambdas(lambdas: &[f64]) -> Result<Vec<f64>> {
    if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Contract(format!(
            "lambdas must lie in [0, 1]: {lambdas:?}"
        )));
    }
    let total: f64 = lambdas.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Contract(format!(
            "lambdas sum to {total}, not 1: {lambdas:?}"
        )));
    }
    Ok(lambdas.iter().map(|l| l / total).collect())
}

/// Modality embeddings in unroll order with one `λ` per step.
#[derive(Clone, Debug)]
pub struct ModalitySequence {
    order: Vec<String>,
    inputs: Vec<Var>,
    lambdas: Vec<f64>,
}

impl ModalitySequence {
    pub fn new(order: Vec<String>, inputs: Vec<Var>, lambdas: &[f64]) -> Result<Self> {
        let mut seq = Self::new_unchecked(order, inputs, lambdas)?;
        seq.lambdas = normalize_lambdas(lambdas)?;
        Ok(seq)
    }

    /// Skips the simplex check (lengths are still validated). Used to compare
    /// the gated cell against a plain LSTM with every `λ = 1`.
    pub fn new_unchecked(order: Vec<String>, inputs: Vec<Var>, lambdas: &[f64]) -> Result<Self> {
        if order.len() != inputs.len() || lambdas.len() != inputs.len() {
            return Err(Error::Contract(format!(
                "{} modality ids, {} inputs and {} lambdas",
                order.len(),
                inputs.len(),
                lambdas.len()
            )));
        }
        Ok(Self {
            order,
            inputs,
            lambdas: lambdas.to_vec(),
        })
    }

    pub fn from_set(set: &ModalityEmbeddingSet, lambdas: &[f64]) -> Result<Self> {
        Self::new(set.modalities().to_vec(), set.embeddings().to_vec(), lambdas)
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `C_t = F⊙C_{t−1} + (I⊙C̃)·λ_t`, `H_t = O⊙tanh(C_t)`.
///
/// `lambda_t` is a scalar node so gradients can flow into it.
pub fn mlstm_step(
    cell: &LstmCell,
    tape: &mut Tape,
    bind: &Binding,
    x_t: Var,
    state: GatedCellState,
    lambda_t: Var,
) -> Result<GatedCellState> {
    if tape.value(lambda_t).numel() != 1 {
        return Err(Error::dim(
            "mlstm_step",
            format!("lambda must be a scalar, got {:?}", tape.shape(lambda_t)),
        ));
    }
    cell.step_gated(tape, bind, x_t, state, Some(lambda_t))
}

/// Runs one gated step per modality from a zero state and returns the final `H`.
pub fn mlstm_forward(
    cell: &LstmCell,
    tape: &mut Tape,
    bind: &Binding,
    seq: &ModalitySequence,
) -> Result<Var> {
    if seq.len() < 2 {
        return Err(Error::Contract(format!(
            "gated fusion needs at least two modalities, got {}",
            seq.len()
        )));
    }
    let n = tape.shape(seq.inputs[0])[0];
    let mut state = GatedCellState::zeros(tape, n, cell.hidden);
    for (&x, &lambda) in seq.inputs.iter().zip(&seq.lambdas) {
        let l = tape.scalar(lambda);
        state = mlstm_step(cell, tape, bind, x, state, l)?;
    }
    Ok(state.h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multilabel,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multilabel => "multilabel",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            positive: 1.0,
            negative: 1.0,
        }
    }
}

/// `w_c = (n_pos + n_neg) / (2·n_c)`.
pub fn class_weights_from_counts(n_pos: usize, n_neg: usize) -> Result<ClassWeights> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "class counts ({n_pos}, {n_neg}) leave a class empty"
        )));
    }
    let total = (n_pos + n_neg) as f64;
    Ok(ClassWeights {
        positive: total / (2.0 * n_pos as f64),
        negative: total / (2.0 * n_neg as f64),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub task: Task,
    pub num_labels: usize,
    pub hidden_dims: Vec<usize>,
    pub class_weights: Option<ClassWeights>,
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        match self.task {
            Task::Binary if self.num_labels != 1 => Err(Error::Config(format!(
                "binary head with {} outputs",
                self.num_labels
            ))),
            Task::Multilabel if self.class_weights.is_some() => Err(Error::Config(
                "multilabel heads are trained without class weights".into(),
            )),
            _ if self.num_labels == 0 => Err(Error::Config("head with zero outputs".into())),
            _ => Ok(()),
        }
    }
}

/// MLP producing raw logits (no output activation).
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub config: HeadConfig,
    pub mlp: Mlp,
}

impl ClassifierHead {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_width: usize,
        config: HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![input_width];
        dims.extend(&config.hidden_dims);
        dims.push(config.num_labels);
        let mlp = Mlp::new(store, prefix, &dims, Activation::Tanh, rng)?;
        Ok(Self { config, mlp })
    }

    pub fn input_width(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn classify(&self, tape: &mut Tape, bind: &Binding, features: Var) -> Result<Var> {
        self.mlp.forward(tape, bind, features)
    }
}

fn check_binary_targets(targets: &[f64]) -> Result<()> {
    match targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        Some(bad) => Err(Error::Contract(format!("target {bad} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Class-weighted binary cross-entropy on `[N, 1]` logits, averaged over samples.
pub fn weighted_bce(tape: &mut Tape, logits: Var, targets: &[f64], weights: ClassWeights) -> Result<Var> {
    check_binary_targets(targets)?;
    if !(weights.positive > 0.0 && weights.negative > 0.0) {
        return Err(Error::Contract(format!("class weights must be positive: {weights:?}")));
    }
    if tape.shape(logits).get(1).copied().unwrap_or(1) != 1 {
        return Err(Error::dim(
            "weighted_bce",
            format!("expected [N, 1] logits, got {:?}", tape.shape(logits)),
        ));
    }
    let per_sample: Vec<f64> = targets
        .iter()
        .map(|&t| if t == 1.0 { weights.positive } else { weights.negative })
        .collect();
    tape.bce_with_logits(logits, targets, &per_sample)
}

/// Independent per-label sigmoid cross-entropy, averaged over samples and labels.
/// `targets` is row-major `[N, L]`.
pub fn multilabel_ce(tape: &mut Tape, logits: Var, targets: &[f64]) -> Result<Var> {
    check_binary_targets(targets)?;
    let ones = vec![1.0; targets.len()];
    tape.bce_with_logits(logits, targets, &ones)
}
