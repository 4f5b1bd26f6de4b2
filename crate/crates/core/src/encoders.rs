//! Toy modality encoders: an affine/activation stack for static feature vectors
//! and a single-layer LSTM for fixed-length sequences. Each encoder's last linear
//! layer maps into the shared embedding space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    StaticVector,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub modality_kind: ModalityKind,
    /// Feature count, or per-step feature count for sequences.
    pub input_dim: usize,
    /// Hidden widths; for sequences the first entry is the LSTM hidden size.
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub activation: Activation,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embedding_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "encoder widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `x · W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.w"), &[in_dim, out_dim], in_dim, rng)?;
        let bias = store.add_uniform(format!("{name}.b"), &[out_dim], in_dim, rng)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, bind.var(self.weight))?;
        tape.add_bias(xw, bind.var(self.bias))
    }
}

/// Affine layers with an activation between them; the final layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` lists every width from input to output, so `dims.len() ≥ 2`.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("mlp needs at least two widths, got {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").out_dim
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let width = tape.shape(x).get(1).copied();
        if tape.shape(x).len() != 2 || width != Some(self.input_dim()) {
            return Err(Error::dim(
                "mlp",
                format!(
                    "input {:?} does not match input width {}",
                    tape.shape(x),
                    self.input_dim()
                ),
            ));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, bind, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }
}

/// `(C, H)` pair threaded through an LSTM unroll.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub c: Var,
    pub h: Var,
}

impl CellState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        let c = tape.constant(Tensor::zeros(&[batch, hidden]));
        let h = tape.constant(Tensor::zeros(&[batch, hidden]));
        Self { c, h }
    }
}

/// LSTM cell with fused gate weights; column blocks are ordered input, forget,
/// candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Gate activations from one step, kept for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct GateValues {
    pub input: Var,
    pub forget: Var,
    pub candidate: Var,
    pub output: Var,
}

impl LstmCell {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_input = store.add_uniform(format!("{prefix}.w_x"), &[input_dim, 4 * hidden], hidden, rng)?;
        let w_hidden = store.add_uniform(format!("{prefix}.w_h"), &[hidden, 4 * hidden], hidden, rng)?;
        let bias = store.add_uniform(format!("{prefix}.b"), &[4 * hidden], hidden, rng)?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    pub fn gates(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        x: Var,
        state: CellState,
    ) -> Result<GateValues> {
        let n = tape.shape(x)[0];
        if tape.shape(x) != [n, self.input_dim]
            || tape.shape(state.h) != [n, self.hidden]
            || tape.shape(state.c) != [n, self.hidden]
        {
            return Err(Error::dim(
                "lstm_cell",
                format!(
                    "x {:?}, C {:?}, H {:?} for input {} / hidden {}",
                    tape.shape(x),
                    tape.shape(state.c),
                    tape.shape(state.h),
                    self.input_dim,
                    self.hidden
                ),
            ));
        }
        let xw = tape.matmul(x, bind.var(self.w_input))?;
        let hw = tape.matmul(state.h, bind.var(self.w_hidden))?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add_bias(pre, bind.var(self.bias))?;
        let h = self.hidden;
        let i = tape.slice_cols(pre, 0, h)?;
        let f = tape.slice_cols(pre, h, h)?;
        let g = tape.slice_cols(pre, 2 * h, h)?;
        let o = tape.slice_cols(pre, 3 * h, h)?;
        Ok(GateValues {
            input: tape.sigmoid(i),
            forget: tape.sigmoid(f),
            candidate: tape.tanh(g),
            output: tape.sigmoid(o),
        })
    }

    /// One step; when `gate` is given the candidate contribution `I ⊙ C̃` is
    /// multiplied by that scalar before entering the cell state.
    pub fn step_gated(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        x: Var,
        state: CellState,
        gate: Option<Var>,
    ) -> Result<CellState> {
        let g = self.gates(tape, bind, x, state)?;
        let kept = tape.mul(g.forget, state.c)?;
        let mut written = tape.mul(g.input, g.candidate)?;
        if let Some(lambda) = gate {
            written = tape.mul_scalar(written, lambda)?;
        }
        let c = tape.add(kept, written)?;
        let squashed = tape.tanh(c);
        let h = tape.mul(g.output, squashed)?;
        Ok(CellState { c, h })
    }
}

/// Standard LSTM step: `C' = F⊙C + I⊙C̃`, `H' = O⊙tanh(C')`.
pub fn lstm_cell(
    cell: &LstmCell,
    tape: &mut Tape,
    bind: &Binding,
    x: Var,
    state: CellState,
) -> Result<CellState> {
    cell.step_gated(tape, bind, x, state, None)
}

/// Fixed-length sequence batch stored as `[N, T, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub values: Tensor,
}

impl SequenceBatch {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.ndim() != 3 {
            return Err(Error::dim(
                "sequence_batch",
                format!("expected [N, T, d], got {:?}", values.shape()),
            ));
        }
        Ok(Self { values })
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn features_per_step(&self) -> usize {
        self.values.shape()[2]
    }
}

#[derive(Clone, Debug)]
pub struct LstmEncoder {
    pub cell: LstmCell,
    pub projection: Linear,
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Mlp(Mlp),
    Lstm(LstmEncoder),
}

impl Encoder {
    /// Registers the encoder's parameters under `prefix` and returns it.
    pub fn build<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        match cfg.modality_kind {
            ModalityKind::StaticVector => {
                let mut dims = vec![cfg.input_dim];
                dims.extend(&cfg.hidden_dims);
                dims.push(cfg.embedding_dim);
                Ok(Encoder::Mlp(Mlp::new(store, prefix, &dims, cfg.activation, rng)?))
            }
            ModalityKind::Sequence => {
                let hidden = cfg.hidden_dims.first().copied().unwrap_or(cfg.embedding_dim);
                let cell = LstmCell::new(store, &format!("{prefix}.lstm"), cfg.input_dim, hidden, rng)?;
                let projection = Linear::new(store, &format!("{prefix}.proj"), hidden, cfg.embedding_dim, rng)?;
                Ok(Encoder::Lstm(LstmEncoder { cell, projection }))
            }
        }
    }

    pub fn kind(&self) -> ModalityKind {
        match self {
            Encoder::Mlp(_) => ModalityKind::StaticVector,
            Encoder::Lstm(_) => ModalityKind::Sequence,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Encoder::Mlp(m) => m.output_dim(),
            Encoder::Lstm(l) => l.projection.out_dim,
        }
    }

    /// Encodes `[N, d]` (static) or `[N, T, d]` (sequence) input into `[N, n]`.
    pub fn encode(&self, tape: &mut Tape, bind: &Binding, input: Var) -> Result<Var> {
        match self {
            Encoder::Mlp(m) => mlp_encode(m, tape, bind, input),
            Encoder::Lstm(l) => lstm_encode(l, tape, bind, input),
        }
    }
}

pub fn mlp_encode(mlp: &Mlp, tape: &mut Tape, bind: &Binding, batch: Var) -> Result<Var> {
    mlp.forward(tape, bind, batch)
}

/// Unrolls the cell over every step from a zero state and projects the final
/// hidden state.
pub fn lstm_encode(enc: &LstmEncoder, tape: &mut Tape, bind: &Binding, batch: Var) -> Result<Var> {
    let &[n, steps, d] = tape.shape(batch) else {
        return Err(Error::dim(
            "lstm_encode",
            format!("expected [N, T, d], got {:?}", tape.shape(batch)),
        ));
    };
    if steps == 0 {
        return Err(Error::Degenerate("sequence with zero steps".into()));
    }
    if d != enc.cell.input_dim {
        return Err(Error::dim(
            "lstm_encode",
            format!("{d} features per step, encoder expects {}", enc.cell.input_dim),
        ));
    }
    let mut state = CellState::zeros(tape, n, enc.cell.hidden);
    for t in 0..steps {
        let x_t = tape.time_step(batch, t)?;
        state = lstm_cell(&enc.cell, tape, bind, x_t, state)?;
    }
    enc.projection.forward(tape, bind, state.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_params, rng, DEFAULT_STEP};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        let n = shape.iter().product();
        let data = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn zero_all(store: &mut ParamStore) {
        for p in store.iter_mut() {
            p.tensor.data_mut().fill(0.0);
        }
    }

    fn static_cfg(input: usize, hidden: Vec<usize>, n: usize) -> EncoderConfig {
        EncoderConfig {
            modality_kind: ModalityKind::StaticVector,
            input_dim: input,
            hidden_dims: hidden,
            embedding_dim: n,
            activation: Activation::Tanh,
        }
    }

    #[test]
    fn zero_mlp_gives_zero_embeddings() {
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, "e", &static_cfg(3, vec![4], 2), &mut rng(1)).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(randn(&[5, 3], 2));
        let y = enc.encode(&mut tape, &b, x).unwrap();
        assert_eq!(tape.shape(y), &[5, 2]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, "e", &static_cfg(3, vec![], 3), &mut rng(1)).unwrap();
        let Encoder::Mlp(m) = &enc else { unreachable!() };
        store.get_mut(m.layers[0].weight).tensor = Tensor::eye(3);
        store.get_mut(m.layers[0].bias).tensor.data_mut().fill(0.0);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let input = randn(&[4, 3], 9);
        let x = tape.constant(input.clone());
        let y = enc.encode(&mut tape, &b, x).unwrap();
        assert_eq!(tape.value(y).data(), input.data());
    }

    #[test]
    fn mlp_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, "e", &static_cfg(3, vec![], 3), &mut rng(1)).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(enc.encode(&mut tape, &b, x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn zero_lstm_cell_halves_the_cell_state() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 2, 3, &mut rng(4)).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(randn(&[2, 2], 5));
        let zero = CellState::zeros(&mut tape, 2, 3);
        let g = cell.gates(&mut tape, &b, x, zero).unwrap();
        for gate in [g.input, g.forget, g.output] {
            assert!(tape.value(gate).data().iter().all(|&v| v == 0.5));
        }
        assert!(tape.value(g.candidate).data().iter().all(|&v| v == 0.0));
        let next = lstm_cell(&cell, &mut tape, &b, x, zero).unwrap();
        assert!(tape.value(next.c).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(next.h).data().iter().all(|&v| v == 0.0));

        let c0 = randn(&[2, 3], 6);
        let c = tape.constant(c0.clone());
        let state = CellState { c, h: zero.h };
        let next = lstm_cell(&cell, &mut tape, &b, x, state).unwrap();
        for (got, orig) in tape.value(next.c).data().iter().zip(c0.data()) {
            assert_eq!(*got, 0.5 * orig);
        }
    }

    #[test]
    fn lstm_cell_gradient_through_three_steps() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 2, 3, &mut rng(7)).unwrap();
        let seq = store.add("input", randn(&[2, 3, 2], 8)).unwrap();
        let err = grad_check_params(
            &store,
            |tape, b| {
                let mut state = CellState::zeros(tape, 2, 3);
                for t in 0..3 {
                    let x_t = tape.time_step(b.var(seq), t)?;
                    state = lstm_cell(&cell, tape, b, x_t, state)?;
                }
                let sq = tape.mul(state.h, state.h)?;
                let s = tape.sum(sq);
                let c = tape.sum(state.c);
                tape.add(s, c)
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn mlp_gradient_through_two_hidden_layers() {
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, "e", &static_cfg(3, vec![5, 4], 2), &mut rng(11)).unwrap();
        let x = store.add("input", randn(&[4, 3], 12)).unwrap();
        let err = grad_check_params(
            &store,
            |tape, b| {
                let y = enc.encode(tape, b, b.var(x))?;
                let sq = tape.mul(y, y)?;
                Ok(tape.sum(sq))
            },
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn lstm_encode_single_step_is_cell_plus_projection() {
        let cfg = EncoderConfig {
            modality_kind: ModalityKind::Sequence,
            input_dim: 2,
            hidden_dims: vec![3],
            embedding_dim: 4,
            activation: Activation::Tanh,
        };
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, "s", &cfg, &mut rng(2)).unwrap();
        let Encoder::Lstm(l) = &enc else { unreachable!() };
        let seq = randn(&[3, 1, 2], 3);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(seq.clone());
        let y = enc.encode(&mut tape, &b, x).unwrap();

        let x_t = tape.constant(seq.reshape(vec![3, 2]).unwrap());
        let zero = CellState::zeros(&mut tape, 3, 3);
        let s = lstm_cell(&l.cell, &mut tape, &b, x_t, zero).unwrap();
        let manual = l.projection.forward(&mut tape, &b, s.h).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(manual).data());
    }

    #[test]
    fn zero_lstm_on_zero_sequence_is_zero() {
        let cfg = EncoderConfig {
            modality_kind: ModalityKind::Sequence,
            input_dim: 2,
            hidden_dims: vec![3],
            embedding_dim: 2,
            activation: Activation::Tanh,
        };
        let mut store = ParamStore::new();
        let enc = Encoder::build(&mut store, "s", &cfg, &mut rng(2)).unwrap();
        zero_all(&mut store);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[4, 5, 2]));
        let y = enc.encode(&mut tape, &b, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
