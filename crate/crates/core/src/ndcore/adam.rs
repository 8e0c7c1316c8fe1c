use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = m.clone();
        Self { config, m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim("adam_step", &[self.m.len()], &[params.len(), grads.len()]));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::dim("adam_step", p.shape(), g.shape()));
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !pd.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let before = p.clone();
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        let g = Tensor::zeros(&[3]);
        adam_step(&mut [&mut p], &[g], &mut state).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g/|g|.
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = Tensor::scalar(0.5);
        let mut state = AdamState::new(cfg, [&p]);
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut state).unwrap();
        let delta = p.item().unwrap() - 0.5;
        assert!((delta + 0.1).abs() < 1e-8, "delta = {delta}");
    }

    #[test]
    fn quadratic_bowl_shrinks_monotonically() {
        let cfg = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let mut w = Tensor::scalar(5.0);
        let mut state = AdamState::new(cfg, [&w]);
        let mut prev = 5.0_f64;
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * w.item().unwrap());
            adam_step(&mut [&mut w], &[g], &mut state).unwrap();
            let now = w.item().unwrap().abs();
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new(AdamConfig::default(), [&p]);
        let g = Tensor::zeros(&[3]);
        assert!(adam_step(&mut [&mut p], &[g], &mut state).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
