//! Parameter updates: plain gradient steps and Adam.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape(g, "parameter vs gradient")?;
    }
    Ok(())
}

/// `theta - lr * grad`, elementwise.
pub fn sgd_step(params: &[Tensor], grads: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
    check_shapes(params, grads)?;
    Ok(params
        .iter()
        .zip(grads)
        .map(|(p, g)| p.zip_map(g, |a, b| a - lr * b))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates with the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    state: &mut AdamState,
    params: &[Tensor],
    grads: &[Tensor],
    cfg: &AdamConfig,
) -> Result<Vec<Tensor>> {
    check_shapes(params, grads)?;
    check_shapes(params, &state.m)?;
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let mut out = Vec::with_capacity(params.len());
    for ((p, g), (m, v)) in params
        .iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let mut next = p.clone();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, (&gi, pi)) in g.data().iter().zip(next.data_mut()).enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            *pi -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        out.push(next);
    }
    Ok(out)
}
