use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |store: &ParamStore| {
            store
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidArgument(
            "optimizer state does not match the parameter store".into(),
        ));
    }
    if let Some(p) = store.params().iter().find(|p| p.requires_grad && p.grad.is_none()) {
        return Err(Error::MissingGrad(p.name.clone()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let p = store.get_mut(id);
        if !p.requires_grad {
            continue;
        }
        let g = p.grad.as_ref().expect("checked above");
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((x, &gi), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *x -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
