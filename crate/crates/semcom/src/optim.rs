//! Adam with freeze-aware stepping.

use crate::error::{Error, Result};
use crate::layers::{GradStore, NameSet, ParamStore};
use crate::scalar::Scalar;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps; bias correction uses `step + 1` during the update.
    pub step: u64,
    moments: BTreeMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Scalar> Default for AdamState<F> {
    fn default() -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl<F: Scalar> AdamState<F> {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update over every parameter in `params`.
///
/// Frozen parameters are left bit-identical even if a gradient is present;
/// an unfrozen parameter without a gradient is an error (the whole step is
/// validated before any mutation, so a failed call changes nothing).
pub fn adam_step<F: Scalar>(
    params: &mut ParamStore<F>,
    grads: &GradStore<F>,
    state: &mut AdamState<F>,
    lr: f64,
    frozen: &NameSet,
) -> Result<()> {
    for (name, tensor) in params.iter() {
        if frozen.contains(name.as_str()) {
            continue;
        }
        match grads.get(name) {
            None => return Err(Error::MissingGradient(name.clone())),
            Some(g) if g.shape() != tensor.shape() => {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    tensor.shape()
                )))
            }
            Some(_) => {}
        }
    }

    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let (b1, b2) = (F::of(state.beta1), F::of(state.beta2));
    let (ob1, ob2) = (F::of(1.0 - state.beta1), F::of(1.0 - state.beta2));
    let (ibc1, ibc2) = (F::of(1.0 / bc1), F::of(1.0 / bc2));
    let lr_f = F::of(lr);
    let eps_f = F::of(state.eps);

    for (name, tensor) in params.iter_mut() {
        if frozen.contains(name.as_str()) {
            continue;
        }
        let g = grads.get(name).expect("validated above");
        let n = tensor.numel();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
        if m.len() != n {
            return Err(Error::Shape(format!(
                "optimizer state for `{name}` sized {}, parameter has {n} elements",
                m.len()
            )));
        }
        for (((p, &gi), mi), vi) in tensor
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = b1 * *mi + ob1 * gi;
            *vi = b2 * *vi + ob2 * gi * gi;
            let m_hat = *mi * ibc1;
            let v_hat = *vi * ibc2;
            *p -= lr_f * m_hat / (v_hat.sqrt() + eps_f);
        }
    }
    Ok(())
}
