//! Adam with bias correction and an exponential moving average of parameters.

use crate::error::{Error, Result};
use crate::mlp::{MlpGrads, MlpParams};
use crate::tensor::Tensor;

/// Adam optimizer state; moment shapes mirror the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        AdamState::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &MlpParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamState {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            lr,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update, applied to `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
    let grad_tensors = grads.tensors();
    {
        let param_tensors = params.tensors();
        if param_tensors.len() != grad_tensors.len() {
            return Err(Error::shape(
                "adam_step",
                param_tensors.len(),
                grad_tensors.len(),
            ));
        }
        for (p, g) in param_tensors.iter().zip(&grad_tensors) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
        }
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for ((p, m), (v, g)) in params
        .tensors_mut()
        .into_iter()
        .zip(&mut state.first_moment)
        .zip(state.second_moment.iter_mut().zip(&grad_tensors))
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = g.data();
        for i in 0..pd.len() {
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gd[i];
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Exponential moving average of a parameter bundle.
#[derive(Debug, Clone)]
pub struct EmaState {
    pub shadow: MlpParams,
    pub momentum: f64,
}

impl EmaState {
    /// Start the shadow at a copy of the live parameters.
    pub fn new(params: &MlpParams, momentum: f64) -> Result<Self> {
        if !(0.0 < momentum && momentum < 1.0) {
            return Err(Error::Config(format!(
                "EMA momentum must be in (0,1), got {momentum}"
            )));
        }
        Ok(EmaState {
            shadow: params.clone(),
            momentum,
        })
    }

    /// shadow <- m * shadow + (1 - m) * params, elementwise.
    pub fn update(&mut self, params: &MlpParams) -> Result<()> {
        let src = params.tensors();
        let dst = self.shadow.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::shape("ema_update", src.len(), dst.len()));
        }
        let m = self.momentum;
        for (d, s) in dst.into_iter().zip(src) {
            if d.shape() != s.shape() {
                return Err(Error::shape(
                    "ema_update",
                    format!("{:?}", d.shape()),
                    format!("{:?}", s.shape()),
                ));
            }
            for (dv, sv) in d.data_mut().iter_mut().zip(s.data()) {
                *dv = m * *dv + (1.0 - m) * sv;
            }
        }
        Ok(())
    }
}
