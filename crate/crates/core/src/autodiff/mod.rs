//! Reverse-mode differentiation over dense `f64` tensors.

pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many, grad_check_params, relative_error, DEFAULT_STEP};
pub use optim::{Optimizer, OptimizerKind, OptimizerState};
pub use params::{Binding, ParamId, ParamStore, Parameter};
pub use tape::{BinaryOp, Tape, UnaryOp, Var};
pub use tensor::{Tensor, EPS};

/// Deterministic RNG used for every seeded draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
