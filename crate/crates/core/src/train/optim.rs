//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::Element;

/// Optimizer constants other than the learning rate, which the schedule
/// supplies fresh at every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimHyper {
    fn default() -> Self {
        OptimHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

impl OptimHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("moment factors must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "eps must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter first/second moment state plus the step counter. One
/// moment pair is kept per registered tensor, in registration order; the
/// caller passes parameters and gradients back in that same order.
#[derive(Debug, Clone)]
pub struct AdamW<E: Element> {
    hyper: OptimHyper,
    t: usize,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Element> AdamW<E> {
    pub fn new(hyper: OptimHyper, sizes: &[usize]) -> AdamW<E> {
        AdamW {
            hyper,
            t: 0,
            m: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![E::zero(); n]).collect(),
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn hyper(&self) -> &OptimHyper {
        &self.hyper
    }

    /// One update: `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, then
    /// `theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)` with
    /// bias-corrected moments. Decay multiplies the parameter directly and
    /// never enters the moments.
    pub fn step(&mut self, lr: f64, params: &mut [&mut [E]], grads: &[&[E]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "update set has {} parameters and {} gradients, optimizer tracks {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let b1 = E::from_f64(self.hyper.beta1);
        let b2 = E::from_f64(self.hyper.beta2);
        let c1 = E::from_f64(1.0 - self.hyper.beta1);
        let c2 = E::from_f64(1.0 - self.hyper.beta2);
        let bc1 = E::from_f64(1.0 - self.hyper.beta1.powi(self.t as i32));
        let bc2 = E::from_f64(1.0 - self.hyper.beta2.powi(self.t as i32));
        let eps = E::from_f64(self.hyper.eps);
        let wd = E::from_f64(self.hyper.weight_decay);
        let lr = E::from_f64(lr);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Usage(format!(
                    "parameter {i} has {} elements, optimizer tracks {}",
                    p.len(),
                    self.m[i].len()
                )));
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for (((pe, &ge), me), ve) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                *me = b1 * *me + c1 * ge;
                *ve = b2 * *ve + c2 * ge * ge;
                let m_hat = *me / bc1;
                let v_hat = *ve / bc2;
                *pe = *pe - lr * (m_hat / (v_hat.sqrt() + eps) + wd * *pe);
            }
        }
        Ok(())
    }
}
