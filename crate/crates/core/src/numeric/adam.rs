use super::{Parameter, ParameterStore};
use crate::error::{Result, StarError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `l2 * value` before the moment update.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1e-6,
        }
    }
}

fn check_finite(param: &Parameter) -> Result<()> {
    match param.grad.data().iter().position(|g| !g.is_finite()) {
        Some(index) => Err(StarError::NonFiniteGradient {
            name: param.name.clone(),
            index,
        }),
        None => Ok(()),
    }
}

/// One bias-corrected Adam update of a single parameter.
pub fn adam_step(param: &mut Parameter, cfg: &AdamConfig) -> Result<()> {
    check_finite(param)?;
    param.step += 1;
    let t = param.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let value = param.value.data_mut();
    let grad = param.grad.data();
    let m = param.adam_m.data_mut();
    let v = param.adam_v.data_mut();
    for i in 0..value.len() {
        let g = grad[i] + cfg.l2 * value[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Updates every parameter, or none of them if any gradient is non-finite.
/// Gradients are zeroed afterwards.
pub fn adam_update(store: &mut ParameterStore, cfg: &AdamConfig) -> Result<()> {
    for p in store.iter() {
        check_finite(p)?;
    }
    for p in store.iter_mut() {
        adam_step(p, cfg)?;
        p.zero_grad();
    }
    Ok(())
}
