//! AdamW optimizer (decoupled weight decay).

use super::Param;
use crate::scalar::{real, Real};
use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    step: usize,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr: real(lr),
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
            weight_decay: real(weight_decay),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = real(lr);
    }

    /// Apply one update to the parameters, visited in a stable order. Moment
    /// state is aligned by position, so the visitation order must not change
    /// between steps.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "AdamW: parameter set changed");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();

        for (i, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((pv, g), (mv, vv)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (one - self.beta1) * *g;
                *vv = self.beta2 * *vv + (one - self.beta2) * *g * *g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *pv);
            }
        }
    }
}
