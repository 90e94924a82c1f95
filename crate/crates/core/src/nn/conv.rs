//! Dilated 1-d convolution via im2col and matrix multiplication.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::graph::{Backward, GradSink, Graph, VarId};
use crate::nn::tensor::{Element, Tensor};

/// Temporal padding policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// No padding: output length `(t - span) / stride + 1` where
    /// `span = dilation * (kw - 1) + 1`.
    Valid,
    /// Zero-pad so the output covers `ceil(t / stride)` positions; when the
    /// total padding is odd the left side gets the smaller half.
    Same,
}

/// Stride, dilation and padding for one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub padding: PadMode,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: 1,
            dilation: 1,
            padding: PadMode::Valid,
        }
    }
}

struct Dims {
    out_ch: usize,
    in_ch: usize,
    kw: usize,
    t_in: usize,
    t_out: usize,
    stride: usize,
    dilation: usize,
    pad_left: usize,
}

impl Dims {
    /// Input time index feeding output position `t` through tap `j`, if it
    /// falls inside the signal.
    #[inline]
    fn tap(&self, t: usize, j: usize) -> Option<usize> {
        let u = (t * self.stride + j * self.dilation) as isize - self.pad_left as isize;
        (0..self.t_in as isize).contains(&u).then_some(u as usize)
    }
}

fn im2col<E: Element>(x: &[E], d: &Dims) -> Vec<E> {
    let mut cols = vec![E::zero(); d.in_ch * d.kw * d.t_out];
    for i in 0..d.in_ch {
        for j in 0..d.kw {
            let row = (i * d.kw + j) * d.t_out;
            for t in 0..d.t_out {
                if let Some(u) = d.tap(t, j) {
                    cols[row + t] = x[i * d.t_in + u];
                }
            }
        }
    }
    cols
}

struct Conv1dBack<E: Element> {
    x: VarId,
    kernel: VarId,
    bias: VarId,
    kv: Arc<Vec<E>>,
    cols: Arc<Vec<E>>,
    dims: Dims,
    /// True when the column matrix is the input itself (1x1, stride 1).
    identity_cols: bool,
}

impl<E: Element> Backward<E> for Conv1dBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        let d = &self.dims;
        let k_rows = d.in_ch * d.kw;
        if sink.wants(self.bias) {
            let buf = sink.buf(self.bias, d.out_ch);
            for c in 0..d.out_ch {
                buf[c] += grad_out[c * d.t_out..(c + 1) * d.t_out]
                    .iter()
                    .copied()
                    .sum();
            }
        }
        if sink.wants(self.kernel) {
            let buf = sink.buf(self.kernel, d.out_ch * k_rows);
            E::gemm(
                d.out_ch, d.t_out, k_rows,
                E::one(), grad_out, false, &self.cols, true,
                E::one(), buf,
            );
        }
        if sink.wants(self.x) {
            if self.identity_cols {
                let buf = sink.buf(self.x, d.in_ch * d.t_in);
                E::gemm(
                    k_rows, d.out_ch, d.t_out,
                    E::one(), &self.kv, true, grad_out, false,
                    E::one(), buf,
                );
            } else {
                let mut dcols = vec![E::zero(); k_rows * d.t_out];
                E::gemm(
                    k_rows, d.out_ch, d.t_out,
                    E::one(), &self.kv, true, grad_out, false,
                    E::zero(), &mut dcols,
                );
                let buf = sink.buf(self.x, d.in_ch * d.t_in);
                for i in 0..d.in_ch {
                    for j in 0..d.kw {
                        let row = (i * d.kw + j) * d.t_out;
                        for t in 0..d.t_out {
                            if let Some(u) = d.tap(t, j) {
                                buf[i * d.t_in + u] += dcols[row + t];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<E: Element> Graph<E> {
    /// Convolves `x: [in_ch, t]` with `kernel: [out_ch, in_ch, kw]` plus
    /// `bias: [out_ch]`, yielding `[out_ch, t_out]`.
    pub fn conv1d(
        &mut self,
        x: VarId,
        kernel: VarId,
        bias: VarId,
        spec: ConvSpec,
    ) -> Result<VarId> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        if xv.rank() != 2 {
            return Err(Error::Shape(format!(
                "conv1d input must be [in_ch, t], got {:?}",
                xv.shape()
            )));
        }
        if kv.rank() != 3 {
            return Err(Error::Shape(format!(
                "conv1d kernel must be [out_ch, in_ch, kw], got {:?}",
                kv.shape()
            )));
        }
        let (in_ch, t_in) = (xv.dim(0), xv.dim(1));
        let (out_ch, kw) = (kv.dim(0), kv.dim(2));
        if kv.dim(1) != in_ch {
            return Err(Error::Shape(format!(
                "conv1d kernel expects {} input channels, signal has {in_ch}",
                kv.dim(1)
            )));
        }
        if bv.rank() != 1 || bv.len() != out_ch {
            return Err(Error::Shape(format!(
                "conv1d bias must be [{out_ch}], got {:?}",
                bv.shape()
            )));
        }
        if spec.stride == 0 || spec.dilation == 0 {
            return Err(Error::Usage("conv1d stride and dilation must be >= 1".into()));
        }
        let span = spec.dilation * (kw - 1) + 1;
        let (t_out, pad_left) = match spec.padding {
            PadMode::Valid => {
                if t_in < span {
                    return Err(Error::Shape(format!(
                        "conv1d: receptive span {span} exceeds signal length {t_in}"
                    )));
                }
                ((t_in - span) / spec.stride + 1, 0)
            }
            PadMode::Same => {
                let t_out = t_in.div_ceil(spec.stride);
                let pad_total = ((t_out - 1) * spec.stride + span).saturating_sub(t_in);
                (t_out, pad_total / 2)
            }
        };

        let dims = Dims {
            out_ch,
            in_ch,
            kw,
            t_in,
            t_out,
            stride: spec.stride,
            dilation: spec.dilation,
            pad_left,
        };
        let identity_cols = kw == 1 && spec.stride == 1;
        let cols: Arc<Vec<E>> = if identity_cols {
            xv.data_arc()
        } else {
            Arc::new(im2col(xv.data(), &dims))
        };

        let k_rows = in_ch * kw;
        let mut out = vec![E::zero(); out_ch * t_out];
        E::gemm(
            out_ch, k_rows, t_out,
            E::one(), kv.data(), false, &cols, false,
            E::zero(), &mut out,
        );
        let bias_data = bv.data();
        for c in 0..out_ch {
            let bc = bias_data[c];
            for v in &mut out[c * t_out..(c + 1) * t_out] {
                *v += bc;
            }
        }

        let needs = self.any_needs_grad(&[x, kernel, bias]);
        let back = needs.then(|| {
            Box::new(Conv1dBack {
                x,
                kernel,
                bias,
                kv: self.value(kernel).data_arc(),
                cols,
                dims,
                identity_cols,
            }) as Box<_>
        });
        Ok(self.push(Tensor::matrix(out_ch, t_out, out), needs, back))
    }
}
