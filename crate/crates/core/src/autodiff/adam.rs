use crate::error::TensorError;

use super::{Real, Tensor};

/// Per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_tensor(param: &Tensor<T>) -> Self {
        Self::new(param.len())
    }
}

/// One bias-corrected Adam step on `param` using its gradient buffer, which is
/// zeroed afterwards.
pub fn adam_update<T: Real>(
    param: &mut Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<(), TensorError> {
    let len = param.len();
    if state.m.len() != len || state.v.len() != len {
        return Err(TensorError::ShapeMismatch {
            op: "adam_update",
            lhs: param.shape().to_vec(),
            rhs: vec![state.m.len()],
        });
    }
    let (data, grad) = param.params_and_grad_mut();
    let grad = grad.ok_or_else(|| {
        TensorError::Contract("adam_update called on a parameter without a gradient".into())
    })?;
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let b1 = T::from_f64_lossy(state.beta1);
    let b2 = T::from_f64_lossy(state.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - state.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - state.beta2.powi(t));
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(state.eps);
    for i in 0..len {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        grad[i] = T::zero();
    }
    Ok(())
}
