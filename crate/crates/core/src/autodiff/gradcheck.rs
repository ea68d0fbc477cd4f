//! Central-difference verification of tape gradients.

use super::params::{Binding, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Max over coordinates of `|autodiff - fd| / (|fd| + 1e-8)` for a scalar
/// function of the given inputs.
pub fn grad_check<F>(f: F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor], track: bool| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), track)).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(point, true)?;
    let mut grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut probe = point.to_vec();
    for (k, &var) in vars.iter().enumerate() {
        let analytic = grads.take(var);
        for idx in 0..point[k].len() {
            let x0 = point[k].data()[idx];
            probe[k].data_mut()[idx] = x0 + FD_STEP;
            let (t, _, o) = eval(&probe, false)?;
            let up = t.value(o).item();
            probe[k].data_mut()[idx] = x0 - FD_STEP;
            let (t, _, o) = eval(&probe, false)?;
            let down = t.value(o).item();
            probe[k].data_mut()[idx] = x0;
            let fd = (up - down) / (2.0 * FD_STEP);
            let ad = analytic.as_ref().map_or(0.0, |g| g.data()[idx]);
            worst = worst.max((ad - fd).abs() / (fd.abs() + 1e-8));
        }
    }
    Ok(worst)
}

/// [`grad_check`] over the trainable parameters of a store.
pub fn grad_check_store<F>(store: &ParamStore, f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let point: Vec<Tensor> = store
        .params()
        .iter()
        .filter(|p| p.requires_grad)
        .map(|p| p.value.clone())
        .collect();
    grad_check(
        |tape, vars| {
            let mut inputs = vars.iter();
            let bound = store
                .params()
                .iter()
                .map(|p| match p.requires_grad {
                    true => *inputs.next().expect("one input per trainable parameter"),
                    false => tape.constant(p.value.clone()),
                })
                .collect();
            f(tape, &Binding::from_vars(bound))
        },
        &point,
    )
}
