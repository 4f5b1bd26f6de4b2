//! Contrastive objectives over row-aligned modality embeddings.
//!
//! Every per-direction or per-modality term is a batch *mean* over samples of
//! `−log softmax` of one positive similarity against all in-batch candidates.
//! Summing over samples instead multiplies each term by the batch size `N`.
//!
//! Pairwise InfoNCE sums both directions (`a→b` and `b→a`) of every modality
//! pair. With two modalities, the One-vs-Others terms are exactly those two
//! directional InfoNCE terms.

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Initial temperature for new runs.
pub const DEFAULT_TAU: f64 = 1.0;

/// Row-aligned per-modality embeddings living on one tape.
#[derive(Clone, Debug)]
pub struct ModalityEmbeddingSet {
    modalities: Vec<String>,
    embeddings: Vec<Var>,
    samples: usize,
    dim: usize,
}

impl ModalityEmbeddingSet {
    /// Checks that every embedding is `[N, n]` with one shared `N` and `n`.
    pub fn new(tape: &Tape, modalities: Vec<String>, embeddings: Vec<Var>) -> Result<Self> {
        if modalities.len() != embeddings.len() || embeddings.is_empty() {
            return Err(Error::Contract(format!(
                "{} modality ids for {} embedding tensors",
                modalities.len(),
                embeddings.len()
            )));
        }
        let first = tape.shape(embeddings[0]).to_vec();
        let [samples, dim] = first[..] else {
            return Err(Error::dim(
                "modality_embeddings",
                format!("`{}` is {first:?}, expected [N, n]", modalities[0]),
            ));
        };
        for (name, &e) in modalities.iter().zip(&embeddings) {
            if tape.shape(e) != first {
                return Err(Error::dim(
                    "modality_embeddings",
                    format!("`{}` is {:?}, `{}` is {first:?}", name, tape.shape(e), modalities[0]),
                ));
            }
        }
        Ok(Self {
            modalities,
            embeddings,
            samples,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn modalities(&self) -> &[String] {
        &self.modalities
    }

    pub fn embeddings(&self) -> &[Var] {
        &self.embeddings
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn require_contrastive(&self) -> Result<()> {
        if self.len() < 2 {
            return Err(Error::Contract(format!(
                "contrastive objectives need at least two modalities, got {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Trainable temperature stored as `log τ`, so `τ > 0` always.
#[derive(Clone, Copy, Debug)]
pub struct Temperature {
    pub log_tau: ParamId,
}

/// `1/τ` recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TemperatureVar {
    pub inv_tau: Var,
}

impl Temperature {
    pub fn new(store: &mut ParamStore, name: &str, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        let log_tau = store.add(name, Tensor::scalar(tau.ln()))?;
        Ok(Self { log_tau })
    }

    pub fn tau(&self, store: &ParamStore) -> f64 {
        store.get(self.log_tau).tensor.data()[0].exp()
    }

    pub fn bind(&self, tape: &mut Tape, bind: &Binding) -> TemperatureVar {
        let neg = tape.neg(bind.var(self.log_tau));
        TemperatureVar {
            inv_tau: tape.exp(neg),
        }
    }
}

impl TemperatureVar {
    pub fn constant(tape: &mut Tape, tau: f64) -> Self {
        Self {
            inv_tau: tape.scalar(1.0 / tau),
        }
    }
}

/// Modality-importance logits; `λ = softmax(logits)` on every evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LambdaWeights {
    pub logits: ParamId,
    pub len: usize,
}

/// `λ` recorded on a tape as a length-`K` vector.
#[derive(Clone, Copy, Debug)]
pub struct LambdaVar {
    pub lambdas: Var,
    pub logits: Var,
}

impl LambdaWeights {
    /// Starts at uniform `λ = 1/K`.
    pub fn new(store: &mut ParamStore, name: &str, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("lambda weights over zero modalities".into()));
        }
        let logits = store.add(name, Tensor::zeros(&[k]))?;
        Ok(Self { logits, len: k })
    }

    pub fn values(&self, store: &ParamStore) -> Vec<f64> {
        crate::autodiff::tape::softmax_raw(store.get(self.logits).tensor.data())
    }

    pub fn bind(&self, tape: &mut Tape, bind: &Binding) -> Result<LambdaVar> {
        let logits = bind.var(self.logits);
        Ok(LambdaVar {
            lambdas: tape.softmax(logits)?,
            logits,
        })
    }
}

impl LambdaVar {
    /// Fixed weights given directly on the simplex; recorded through
    /// `softmax(ln λ)` so the tape layout matches the trainable case.
    pub fn constant(tape: &mut Tape, lambdas: &[f64]) -> Result<Self> {
        if lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Contract(format!("lambdas must be positive: {lambdas:?}")));
        }
        let logits = tape.constant(Tensor::vector(lambdas.iter().map(|l| l.ln()).collect())?);
        Ok(Self {
            lambdas: tape.softmax(logits)?,
            logits,
        })
    }

    pub fn len(&self, tape: &Tape) -> usize {
        tape.value(self.lambdas).numel()
    }

    /// Shannon entropy `H(λ) = logsumexp(z) − Σ λ_i z_i`, free of `log λ`.
    pub fn entropy(&self, tape: &mut Tape) -> Result<Var> {
        let lse = tape.logsumexp_rows(self.logits)?;
        let weighted = tape.mul(self.lambdas, self.logits)?;
        let dot = tape.sum(weighted);
        tape.sub(lse, dot)
    }
}

/// Per-term breakdown of a contrastive objective.
#[derive(Clone, Debug)]
pub struct ObjectiveTerms {
    pub total: Var,
    pub per_modality: Vec<Var>,
}

/// `S[k, m] = cos(a_k, b_m) / τ`.
pub fn similarity_matrix(tape: &mut Tape, a: Var, b: Var, temp: TemperatureVar) -> Result<Var> {
    if tape.shape(a).len() != 2 || tape.shape(a) != tape.shape(b) {
        return Err(Error::dim(
            "similarity_matrix",
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    let na = tape
        .normalize_rows(a)
        .map_err(|e| Error::Degenerate(format!("left operand: {e}")))?;
    let nb = tape
        .normalize_rows(b)
        .map_err(|e| Error::Degenerate(format!("right operand: {e}")))?;
    let nbt = tape.transpose(nb)?;
    let cos = tape.matmul(na, nbt)?;
    tape.mul_scalar(cos, temp.inv_tau)
}

/// Mean over anchors `k` of `−log softmax_m(S[k, ·])[k]` with `S = sim(anchor, candidates)/τ`.
pub fn directional_infonce(
    tape: &mut Tape,
    anchors: Var,
    candidates: Var,
    temp: TemperatureVar,
) -> Result<Var> {
    let s = similarity_matrix(tape, anchors, candidates, temp)?;
    let lse = tape.logsumexp_rows(s)?;
    let positives = tape.diag(s)?;
    let per_sample = tape.sub(lse, positives)?;
    Ok(tape.mean(per_sample))
}

/// Both directions of one modality pair: `total = (a→b) + (b→a)`.
#[derive(Clone, Copy, Debug)]
pub struct PairLoss {
    pub total: Var,
    pub a_to_b: Var,
    pub b_to_a: Var,
}

pub fn infonce_pair_loss(tape: &mut Tape, a: Var, b: Var, temp: TemperatureVar) -> Result<PairLoss> {
    let a_to_b = directional_infonce(tape, a, b, temp)?;
    let b_to_a = directional_infonce(tape, b, a, temp)?;
    let total = tape.add(a_to_b, b_to_a)?;
    Ok(PairLoss {
        total,
        a_to_b,
        b_to_a,
    })
}

/// Sum of [`infonce_pair_loss`] over every unordered modality pair.
pub fn infonce_all_pairs(tape: &mut Tape, set: &ModalityEmbeddingSet, temp: TemperatureVar) -> Result<Var> {
    set.require_contrastive()?;
    let e = set.embeddings();
    let mut totals = Vec::new();
    for i in 0..e.len() {
        for j in i + 1..e.len() {
            totals.push(infonce_pair_loss(tape, e[i], e[j], temp)?.total);
        }
    }
    tape.add_all(&totals)
}

/// Row-wise mean of every modality except `i`.
pub fn others_mean(tape: &mut Tape, set: &ModalityEmbeddingSet, i: usize) -> Result<Var> {
    set.require_contrastive()?;
    if i >= set.len() {
        return Err(Error::Contract(format!("modality index {i} of {}", set.len())));
    }
    let rest: Vec<Var> = set
        .embeddings()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .collect();
    if let [only] = rest[..] {
        return Ok(only);
    }
    let total = tape.add_all(&rest)?;
    Ok(tape.scale(total, 1.0 / rest.len() as f64))
}

/// Unweighted One-vs-Others: term `i` contrasts modality `i` against the mean
/// of the others; the total sums the terms.
pub fn ovo_loss(tape: &mut Tape, set: &ModalityEmbeddingSet, temp: TemperatureVar) -> Result<ObjectiveTerms> {
    set.require_contrastive()?;
    let per_modality = (0..set.len())
        .map(|i| {
            let others = others_mean(tape, set, i)?;
            directional_infonce(tape, set.embeddings()[i], others, temp)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tape.add_all(&per_modality)?;
    Ok(ObjectiveTerms { total, per_modality })
}

/// One-vs-Others with term `i` scaled by `λ_i`; `per_modality` holds the
/// weighted terms.
pub fn weighted_ovo_loss(
    tape: &mut Tape,
    set: &ModalityEmbeddingSet,
    temp: TemperatureVar,
    lam: &LambdaVar,
) -> Result<ObjectiveTerms> {
    if lam.len(tape) != set.len() {
        return Err(Error::Contract(format!(
            "{} lambdas for {} modalities",
            lam.len(tape),
            set.len()
        )));
    }
    let raw = ovo_loss(tape, set, temp)?;
    let per_modality = raw
        .per_modality
        .iter()
        .enumerate()
        .map(|(i, &term)| {
            let weight = tape.index(lam.lambdas, i)?;
            tape.mul_scalar(term, weight)
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tape.add_all(&per_modality)?;
    Ok(ObjectiveTerms { total, per_modality })
}

/// Pairwise InfoNCE for two modalities, λ-weighted One-vs-Others for three or more.
pub fn loss_for_combination(
    tape: &mut Tape,
    set: &ModalityEmbeddingSet,
    temp: TemperatureVar,
    lam: Option<&LambdaVar>,
) -> Result<Var> {
    match set.len() {
        0 | 1 => Err(Error::Contract(format!(
            "a modality combination needs at least two modalities, got {}",
            set.len()
        ))),
        2 => {
            let e = set.embeddings();
            Ok(infonce_pair_loss(tape, e[0], e[1], temp)?.total)
        }
        _ => {
            let lam = lam.ok_or_else(|| {
                Error::Contract("three or more modalities need lambda weights".into())
            })?;
            Ok(weighted_ovo_loss(tape, set, temp, lam)?.total)
        }
    }
}
