//! Temporal pooling.

use crate::error::{Error, Result};
use crate::nn::graph::{Backward, GradSink, Graph, VarId};
use crate::nn::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    /// Mean over the whole time axis, collapsing `[ch, t]` to `[ch]`.
    /// Window and stride are ignored.
    GlobalAvg,
}

struct MaxPoolBack {
    x: VarId,
    /// Flat input index that won each output slot.
    argmax: Vec<usize>,
    in_len: usize,
}

impl<E: Element> Backward<E> for MaxPoolBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.x) {
            return;
        }
        let buf = sink.buf(self.x, self.in_len);
        for (&src, &g) in self.argmax.iter().zip(grad_out) {
            buf[src] += g;
        }
    }
}

struct AvgPoolBack {
    x: VarId,
    window: usize,
    stride: usize,
    t_in: usize,
    t_out: usize,
    in_len: usize,
}

impl<E: Element> Backward<E> for AvgPoolBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.x) {
            return;
        }
        let ch = self.in_len / self.t_in;
        let scale = E::one() / E::from_f64(self.window as f64);
        let buf = sink.buf(self.x, self.in_len);
        for c in 0..ch {
            for t in 0..self.t_out {
                let g = grad_out[c * self.t_out + t] * scale;
                let base = c * self.t_in + t * self.stride;
                for i in 0..self.window {
                    buf[base + i] += g;
                }
            }
        }
    }
}

struct GlobalAvgBack {
    x: VarId,
    t: usize,
    in_len: usize,
}

impl<E: Element> Backward<E> for GlobalAvgBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.x) {
            return;
        }
        let scale = E::one() / E::from_f64(self.t as f64);
        let buf = sink.buf(self.x, self.in_len);
        for (c, &g) in grad_out.iter().enumerate() {
            let gs = g * scale;
            for v in &mut buf[c * self.t..(c + 1) * self.t] {
                *v += gs;
            }
        }
    }
}

impl<E: Element> Graph<E> {
    /// Pools `x: [ch, t]` along time. `Max`/`Avg` slide a window of
    /// `window` samples with step `stride` (no padding) and return
    /// `[ch, (t - window)/stride + 1]`; ties under `Max` route the gradient
    /// to the earliest maximum.
    pub fn pool1d(
        &mut self,
        x: VarId,
        kind: PoolKind,
        window: usize,
        stride: usize,
    ) -> Result<VarId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Shape(format!(
                "pool1d input must be [ch, t], got {:?}",
                xv.shape()
            )));
        }
        let (ch, t_in) = (xv.dim(0), xv.dim(1));
        if t_in == 0 {
            return Err(Error::Shape("pool1d over an empty time axis".into()));
        }
        let needs = self.needs_grad(x);
        let data = xv.data();
        let in_len = data.len();

        if kind == PoolKind::GlobalAvg {
            let scale = E::one() / E::from_f64(t_in as f64);
            let out: Vec<E> = (0..ch)
                .map(|c| data[c * t_in..(c + 1) * t_in].iter().copied().sum::<E>() * scale)
                .collect();
            let back = needs.then(|| {
                Box::new(GlobalAvgBack {
                    x,
                    t: t_in,
                    in_len,
                }) as Box<_>
            });
            return Ok(self.push(Tensor::vector(out), needs, back));
        }

        if window == 0 || stride == 0 {
            return Err(Error::Usage("pool1d window and stride must be >= 1".into()));
        }
        if window > t_in {
            return Err(Error::Shape(format!(
                "pool1d window {window} exceeds signal length {t_in}"
            )));
        }
        let t_out = (t_in - window) / stride + 1;
        let mut out = vec![E::zero(); ch * t_out];
        match kind {
            PoolKind::Max => {
                let mut argmax = vec![0usize; ch * t_out];
                for c in 0..ch {
                    for t in 0..t_out {
                        let base = c * t_in + t * stride;
                        let (mut best, mut best_i) = (data[base], base);
                        for i in 1..window {
                            if data[base + i] > best {
                                best = data[base + i];
                                best_i = base + i;
                            }
                        }
                        out[c * t_out + t] = best;
                        argmax[c * t_out + t] = best_i;
                    }
                }
                let back = needs.then(|| {
                    Box::new(MaxPoolBack {
                        x,
                        argmax,
                        in_len,
                    }) as Box<_>
                });
                Ok(self.push(Tensor::matrix(ch, t_out, out), needs, back))
            }
            PoolKind::Avg => {
                let scale = E::one() / E::from_f64(window as f64);
                for c in 0..ch {
                    for t in 0..t_out {
                        let base = c * t_in + t * stride;
                        out[c * t_out + t] =
                            data[base..base + window].iter().copied().sum::<E>() * scale;
                    }
                }
                let back = needs.then(|| {
                    Box::new(AvgPoolBack {
                        x,
                        window,
                        stride,
                        t_in,
                        t_out,
                        in_len,
                    }) as Box<_>
                });
                Ok(self.push(Tensor::matrix(ch, t_out, out), needs, back))
            }
            PoolKind::GlobalAvg => unreachable!(),
        }
    }
}
