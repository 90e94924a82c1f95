//! Per-channel batch normalization over the time axis.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::graph::{Backward, BatchStats, GradSink, Graph, VarId};
use crate::nn::tensor::{Element, Tensor};

struct BatchNormBack<E: Element> {
    x: VarId,
    gamma: VarId,
    beta: VarId,
    xhat: Arc<Vec<E>>,
    inv_std: Vec<E>,
    gv: Arc<Vec<E>>,
    t: usize,
    /// Eval mode normalizes with constants, so dx is a plain rescale; train
    /// mode differentiates through the batch statistics.
    train: bool,
}

impl<E: Element> Backward<E> for BatchNormBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        let (ch, t) = (self.inv_std.len(), self.t);
        if sink.wants(self.beta) {
            let buf = sink.buf(self.beta, ch);
            for c in 0..ch {
                buf[c] += grad_out[c * t..(c + 1) * t].iter().copied().sum();
            }
        }
        if sink.wants(self.gamma) {
            let buf = sink.buf(self.gamma, ch);
            for c in 0..ch {
                buf[c] += grad_out[c * t..(c + 1) * t]
                    .iter()
                    .zip(&self.xhat[c * t..(c + 1) * t])
                    .map(|(&g, &xh)| g * xh)
                    .sum();
            }
        }
        if sink.wants(self.x) {
            let buf = sink.buf(self.x, ch * t);
            let tn = E::from_f64(t as f64);
            for c in 0..ch {
                let g = &grad_out[c * t..(c + 1) * t];
                let xh = &self.xhat[c * t..(c + 1) * t];
                let scale = self.gv[c] * self.inv_std[c];
                if self.train {
                    let sum_g: E = g.iter().copied().sum();
                    let sum_gx: E = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    for i in 0..t {
                        buf[c * t + i] +=
                            scale * (tn * g[i] - sum_g - xh[i] * sum_gx) / tn;
                    }
                } else {
                    for i in 0..t {
                        buf[c * t + i] += scale * g[i];
                    }
                }
            }
        }
    }
}

impl<E: Element> Graph<E> {
    /// Train-mode batchnorm of `x: [ch, t]`: normalizes each channel with
    /// the statistics of this call (biased variance), then applies
    /// `gamma * xhat + beta`. When `stat_key` is set, the raw batch mean and
    /// variance are recorded on the graph for the caller to fold into
    /// running buffers after the step.
    pub fn batchnorm_train(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: E,
        stat_key: Option<usize>,
    ) -> Result<VarId> {
        let (ch, t) = check_bn_shapes(self, x, gamma, beta)?;
        let data = self.value(x).data();
        let mut mean = vec![E::zero(); ch];
        let mut var = vec![E::zero(); ch];
        let tn = E::from_f64(t as f64);
        for c in 0..ch {
            let col = &data[c * t..(c + 1) * t];
            let m: E = col.iter().copied().sum::<E>() / tn;
            let v: E = col.iter().map(|&x| (x - m) * (x - m)).sum::<E>() / tn;
            mean[c] = m;
            var[c] = v;
        }
        if let Some(key) = stat_key {
            self.record_batch_stats(BatchStats {
                key,
                mean: mean.clone(),
                var: var.clone(),
            });
        }
        self.batchnorm_with_stats(x, gamma, beta, eps, &mean, &var, true)
    }

    /// Eval-mode batchnorm: normalizes with the supplied running statistics
    /// instead of batch statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: E,
        running_mean: &[E],
        running_var: &[E],
    ) -> Result<VarId> {
        let (ch, _) = check_bn_shapes(self, x, gamma, beta)?;
        if running_mean.len() != ch || running_var.len() != ch {
            return Err(Error::Shape(format!(
                "batchnorm running stats must have {ch} channels, got {}/{}",
                running_mean.len(),
                running_var.len()
            )));
        }
        self.batchnorm_with_stats(x, gamma, beta, eps, running_mean, running_var, false)
    }

    fn batchnorm_with_stats(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: E,
        mean: &[E],
        var: &[E],
        train: bool,
    ) -> Result<VarId> {
        let (ch, t) = (self.value(x).dim(0), self.value(x).dim(1));
        let data = self.value(x).data();
        let gv = self.value(gamma).data_arc();
        let bv = self.value(beta).data_arc();
        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![E::zero(); ch * t];
        let mut out = vec![E::zero(); ch * t];
        for c in 0..ch {
            for i in 0..t {
                let xh = (data[c * t + i] - mean[c]) * inv_std[c];
                xhat[c * t + i] = xh;
                out[c * t + i] = gv[c] * xh + bv[c];
            }
        }
        let needs = self.any_needs_grad(&[x, gamma, beta]);
        let back = needs.then(|| {
            Box::new(BatchNormBack {
                x,
                gamma,
                beta,
                xhat: Arc::new(xhat),
                inv_std,
                gv,
                t,
                train,
            }) as Box<_>
        });
        Ok(self.push(Tensor::matrix(ch, t, out), needs, back))
    }
}

fn check_bn_shapes<E: Element>(
    g: &Graph<E>,
    x: VarId,
    gamma: VarId,
    beta: VarId,
) -> Result<(usize, usize)> {
    let xv = g.value(x);
    if xv.rank() != 2 {
        return Err(Error::Shape(format!(
            "batchnorm input must be [ch, t], got {:?}",
            xv.shape()
        )));
    }
    let (ch, t) = (xv.dim(0), xv.dim(1));
    if t == 0 {
        return Err(Error::Shape("batchnorm over an empty time axis".into()));
    }
    for (name, id) in [("gamma", gamma), ("beta", beta)] {
        let v = g.value(id);
        if v.rank() != 1 || v.len() != ch {
            return Err(Error::Shape(format!(
                "batchnorm {name} must be [{ch}], got {:?}",
                v.shape()
            )));
        }
    }
    Ok((ch, t))
}
