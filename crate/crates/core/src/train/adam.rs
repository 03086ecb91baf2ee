use std::collections::BTreeMap;

use crate::autodiff::{Real, Tensor};
use crate::model::ModelParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments per parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first: BTreeMap<String, Tensor<T>>,
    pub second: BTreeMap<String, Tensor<T>>,
}

/// A step was refused because a gradient held a non-finite value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedStep {
    pub parameter: String,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }
}

/// One Adam update with decoupled weight decay
/// (`theta <- theta - lr * wd * theta` first). Parameters without a
/// gradient entry are left untouched. If any gradient is non-finite nothing
/// changes and the offending parameter is reported.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<Tensor<T>>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<(), RejectedStep> {
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(RejectedStep {
            parameter: name.clone(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr_t, decay, eps) = (
        T::of(lr),
        T::one() - T::of(lr * weight_decay),
        T::of(EPSILON),
    );
    params.visit_mut(|name, theta| {
        let Some(g) = grads.get(name) else { return };
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(theta.shape().to_vec()));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(theta.shape().to_vec()));
        for (((p, &gi), mi), vi) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *p *= decay;
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    });
    Ok(())
}
