//! Central finite-difference verification of tape gradients.

use crate::autodiff::params::{Binding, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;
use crate::error::Result;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error of one coordinate, floored so near-zero pairs compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `f` at `x` and returns the max relative error over coordinates.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), h)
}

/// Multi-input variant: every tensor in `inputs` is differentiated.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor], track: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(track)))
            .collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.item(out);
        if !track {
            return Ok((value, Vec::new()));
        }
        tape.backward(out)?;
        let grads = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| {
                tape.grad(v)
                    .map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec)
            })
            .collect();
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (which, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let (plus, _) = eval(&probe, false)?;
            probe[which].data_mut()[i] = orig - h;
            let (minus, _) = eval(&probe, false)?;
            probe[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            if err.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Checks the gradient of `f` with respect to every trainable parameter of
/// `store`. Inputs that should be differentiated can be registered as parameters.
pub fn grad_check_params<F>(store: &ParamStore, f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let out = f(&mut tape, &b)?;
        Ok(tape.item(out))
    };
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let out = f(&mut tape, &b)?;
    tape.backward(out)?;
    let mut probe = store.clone();
    probe.zero_grads();
    let mut analytic = probe.clone();
    analytic.accumulate_grads(&tape, &b);

    let mut worst: f64 = 0.0;
    for id in store.ids().filter(|&id| store.get(id).trainable) {
        let grads = analytic
            .get(id)
            .tensor
            .grad()
            .map_or_else(|| vec![0.0; store.get(id).tensor.numel()], <[f64]>::to_vec);
        for (k, &a) in grads.iter().enumerate() {
            let orig = store.get(id).tensor.data()[k];
            probe.get_mut(id).tensor.data_mut()[k] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[k] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[k] = orig;
            let err = relative_error(a, (plus - minus) / (2.0 * h));
            if err.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]).unwrap();
        let err = grad_check(|t, x| Ok(t.sum(x)), &x, DEFAULT_STEP).unwrap();
        assert!(err < 1e-9, "{err}");
    }
}
