//! Parameter layout shared by every regime.
//!
//! Names: `enc.<modality>.*` for encoders, `tau` (log temperature), `lambda`
//! (λ logits, three or more modalities), `fusion.*` for the gated LSTM and
//! `head.*` for the classifier.

use ovo_core::autodiff::{rng, Binding, ParamStore, Tape, Tensor, Var};
use ovo_core::encoders::{Activation, Encoder, EncoderConfig, LstmCell};
use ovo_core::fusion::{mlstm_forward, ClassifierHead, HeadConfig, ModalitySequence};
use ovo_core::losses::{loss_for_combination, LambdaWeights, ModalityEmbeddingSet, Temperature};
use ovo_core::Result;

use crate::config::{Regime, RunConfig};
use crate::data::RunData;

pub const ENCODER_PREFIX: &str = "enc.";

#[derive(Clone, Debug)]
pub enum Fusion {
    /// Pre-training only; no head.
    None,
    Concat(ClassifierHead),
    Gated {
        cell: LstmCell,
        head: ClassifierHead,
        lambdas: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub modalities: Vec<String>,
    pub encoders: Vec<Encoder>,
    pub temperature: Temperature,
    pub lambdas: Option<LambdaWeights>,
    pub fusion: Fusion,
}

impl Model {
    /// Registers parameters in a fixed order so a seed maps to one initialization.
    /// `gate_lambdas` is required for the mlstm regime.
    pub fn build(cfg: &RunConfig, data: &RunData, gate_lambdas: Option<Vec<f64>>) -> Result<Self> {
        let mut r = rng(cfg.seed);
        let mut store = ParamStore::new();
        let mut encoders = Vec::new();
        for m in &cfg.modalities {
            let ec = EncoderConfig {
                modality_kind: data.kind(m),
                input_dim: data.input_dim(m),
                hidden_dims: cfg.encoder_hidden.clone(),
                embedding_dim: cfg.embedding_dim,
                activation: Activation::Tanh,
            };
            encoders.push(Encoder::build(&mut store, &format!("{ENCODER_PREFIX}{m}"), &ec, &mut r)?);
        }
        let temperature = Temperature::new(&mut store, "tau", cfg.initial_tau)?;
        let lambdas = if cfg.modalities.len() >= 3 {
            Some(LambdaWeights::new(&mut store, "lambda", cfg.modalities.len())?)
        } else {
            None
        };
        let head_cfg = HeadConfig {
            task: cfg.task,
            num_labels: data.num_outputs(cfg.task),
            hidden_dims: cfg.head_hidden.clone(),
            class_weights: None,
        };
        let fusion = match cfg.regime {
            Regime::ContrastivePretrain => Fusion::None,
            Regime::FrozenFinetune | Regime::SupervisedBaseline => {
                let width = cfg.embedding_dim * cfg.modalities.len();
                Fusion::Concat(ClassifierHead::new(&mut store, "head", width, head_cfg, &mut r)?)
            }
            Regime::Mlstm => {
                let hidden = cfg.mlstm_hidden();
                let cell = LstmCell::new(&mut store, "fusion", cfg.embedding_dim, hidden, &mut r)?;
                let head = ClassifierHead::new(&mut store, "head", hidden, head_cfg, &mut r)?;
                let lambdas = gate_lambdas.ok_or_else(|| {
                    ovo_core::Error::Config("mlstm regime needs gate lambdas".into())
                })?;
                Fusion::Gated { cell, head, lambdas }
            }
        };
        Ok(Self {
            store,
            modalities: cfg.modalities.clone(),
            encoders,
            temperature,
            lambdas,
            fusion,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoders[0].embedding_dim()
    }

    pub fn lambda_values(&self) -> Option<Vec<f64>> {
        self.lambdas.map(|l| l.values(&self.store))
    }

    pub fn tau(&self) -> f64 {
        self.temperature.tau(&self.store)
    }

    pub fn constants(tape: &mut Tape, inputs: &[Tensor]) -> Vec<Var> {
        inputs.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn embed(&self, tape: &mut Tape, bind: &Binding, inputs: &[Var]) -> Result<Vec<Var>> {
        self.encoders
            .iter()
            .zip(inputs)
            .map(|(e, &x)| e.encode(tape, bind, x))
            .collect()
    }

    pub fn embedding_set(&self, tape: &mut Tape, bind: &Binding, inputs: &[Var]) -> Result<ModalityEmbeddingSet> {
        let e = self.embed(tape, bind, inputs)?;
        ModalityEmbeddingSet::new(tape, self.modalities.clone(), e)
    }

    /// InfoNCE for two modalities, λ-weighted OvO otherwise, minus `β·H(λ)` when `β > 0`.
    pub fn contrastive_loss(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        inputs: &[Var],
        entropy_weight: f64,
    ) -> Result<Var> {
        let set = self.embedding_set(tape, bind, inputs)?;
        let temp = self.temperature.bind(tape, bind);
        let lam = self.lambdas.map(|l| l.bind(tape, bind)).transpose()?;
        let loss = loss_for_combination(tape, &set, temp, lam.as_ref())?;
        match lam {
            Some(l) if entropy_weight > 0.0 => {
                let h = l.entropy(tape)?;
                let bonus = tape.scale(h, entropy_weight);
                tape.sub(loss, bonus)
            }
            _ => Ok(loss),
        }
    }

    /// Classifier logits from the `[S, K·n]` concatenation of embeddings.
    pub fn head_logits(&self, tape: &mut Tape, bind: &Binding, fused: Var) -> Result<Var> {
        match &self.fusion {
            Fusion::None => Err(ovo_core::Error::Contract("a pre-training model has no head".into())),
            Fusion::Concat(head) => head.classify(tape, bind, fused),
            Fusion::Gated { cell, head, lambdas } => {
                let n = self.embedding_dim();
                let parts = (0..self.modalities.len())
                    .map(|i| tape.slice_cols(fused, i * n, n))
                    .collect::<Result<Vec<_>>>()?;
                let seq = ModalitySequence::new(self.modalities.clone(), parts, lambdas)?;
                let h = mlstm_forward(cell, tape, bind, &seq)?;
                head.classify(tape, bind, h)
            }
        }
    }

    pub fn logits(&self, tape: &mut Tape, bind: &Binding, inputs: &[Var]) -> Result<Var> {
        let e = self.embed(tape, bind, inputs)?;
        let fused = tape.concat_cols(&e)?;
        self.head_logits(tape, bind, fused)
    }

    /// Forward pass without gradients (no parameter requires a gradient).
    pub fn predict(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let mut frozen = self.store.clone();
        for p in frozen.iter_mut() {
            p.trainable = false;
        }
        let mut tape = Tape::new();
        let bind = frozen.bind(&mut tape);
        let vars = Self::constants(&mut tape, inputs);
        let out = self.logits(&mut tape, &bind, &vars)?;
        Ok(tape.value(out).clone())
    }

    /// `[N, n]` embeddings per modality, no gradients.
    pub fn embeddings(&self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut frozen = self.store.clone();
        for p in frozen.iter_mut() {
            p.trainable = false;
        }
        let mut tape = Tape::new();
        let bind = frozen.bind(&mut tape);
        let vars = Self::constants(&mut tape, inputs);
        let e = self.embed(&mut tape, &bind, &vars)?;
        Ok(e.iter().map(|&v| tape.value(v).clone()).collect())
    }
}
