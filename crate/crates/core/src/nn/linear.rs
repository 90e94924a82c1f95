//! Affine maps for vectors and row batches.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::graph::{Backward, GradSink, Graph, VarId};
use crate::nn::tensor::{Element, Tensor};

struct LinearBack<E: Element> {
    x: VarId,
    w: VarId,
    b: VarId,
    xv: Arc<Vec<E>>,
    wv: Arc<Vec<E>>,
    /// Row count when the input was a matrix; `None` for a single vector.
    rows: Option<usize>,
    in_dim: usize,
    out_dim: usize,
}

impl<E: Element> Backward<E> for LinearBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        let (ind, outd) = (self.in_dim, self.out_dim);
        match self.rows {
            None => {
                if sink.wants(self.b) {
                    sink.add(self.b, grad_out);
                }
                if sink.wants(self.w) {
                    let buf = sink.buf(self.w, outd * ind);
                    // dW += g ⊗ x
                    E::gemm(outd, 1, ind, E::one(), grad_out, false, &self.xv, false, E::one(), buf);
                }
                if sink.wants(self.x) {
                    let buf = sink.buf(self.x, ind);
                    // dx += Wᵀ g
                    E::gemm(ind, outd, 1, E::one(), &self.wv, true, grad_out, false, E::one(), buf);
                }
            }
            Some(rows) => {
                if sink.wants(self.b) {
                    let buf = sink.buf(self.b, outd);
                    for r in 0..rows {
                        for (bb, &g) in buf.iter_mut().zip(&grad_out[r * outd..(r + 1) * outd]) {
                            *bb += g;
                        }
                    }
                }
                if sink.wants(self.w) {
                    let buf = sink.buf(self.w, outd * ind);
                    // dW += gᵀ @ x
                    E::gemm(outd, rows, ind, E::one(), grad_out, true, &self.xv, false, E::one(), buf);
                }
                if sink.wants(self.x) {
                    let buf = sink.buf(self.x, rows * ind);
                    // dx += g @ W
                    E::gemm(rows, outd, ind, E::one(), grad_out, false, &self.wv, false, E::one(), buf);
                }
            }
        }
    }
}

impl<E: Element> Graph<E> {
    /// `x @ wᵀ + b` where `w: [out, in]` and `b: [out]`. A vector input
    /// `[in]` yields `[out]`; a matrix `[rows, in]` maps every row,
    /// yielding `[rows, out]`.
    pub fn linear(&mut self, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
        let wv = self.value(w);
        if wv.rank() != 2 {
            return Err(Error::Shape(format!(
                "linear weight must be [out, in], got {:?}",
                wv.shape()
            )));
        }
        let (out_dim, in_dim) = (wv.dim(0), wv.dim(1));
        let bv = self.value(b);
        if bv.rank() != 1 || bv.len() != out_dim {
            return Err(Error::Shape(format!(
                "linear bias must be [{out_dim}], got {:?}",
                bv.shape()
            )));
        }
        let xv = self.value(x);
        let rows = match xv.rank() {
            1 => {
                if xv.len() != in_dim {
                    return Err(Error::Shape(format!(
                        "linear expects [{in_dim}] input, got {:?}",
                        xv.shape()
                    )));
                }
                None
            }
            2 => {
                if xv.dim(1) != in_dim {
                    return Err(Error::Shape(format!(
                        "linear expects [*, {in_dim}] input, got {:?}",
                        xv.shape()
                    )));
                }
                Some(xv.dim(0))
            }
            _ => {
                return Err(Error::Shape(format!(
                    "linear input must be a vector or matrix, got {:?}",
                    xv.shape()
                )))
            }
        };

        let (xd, wd, bd) = (xv.data_arc(), wv.data_arc(), bv.data());
        let out = match rows {
            None => {
                let mut y = bd.to_vec();
                // y += W x
                E::gemm(out_dim, in_dim, 1, E::one(), &wd, false, &xd, false, E::one(), &mut y);
                Tensor::vector(y)
            }
            Some(r) => {
                let mut y = vec![E::zero(); r * out_dim];
                E::gemm(r, in_dim, out_dim, E::one(), &xd, false, &wd, true, E::zero(), &mut y);
                for row in 0..r {
                    for (v, &bb) in y[row * out_dim..(row + 1) * out_dim].iter_mut().zip(bd) {
                        *v += bb;
                    }
                }
                Tensor::matrix(r, out_dim, y)
            }
        };

        let needs = self.any_needs_grad(&[x, w, b]);
        let back = needs.then(|| {
            Box::new(LinearBack {
                x,
                w,
                b,
                xv: xd,
                wv: wd,
                rows,
                in_dim,
                out_dim,
            }) as Box<_>
        });
        Ok(self.push(out, needs, back))
    }
}
