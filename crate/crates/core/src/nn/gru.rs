//! Fused gated recurrent units, single direction and bidirectional.
//!
//! Parameters use stacked gate layout: the update gate `z`, reset gate `r`,
//! and candidate `n` occupy consecutive `h`-sized blocks of the `3h` axis.
//! Each direction owns an input projection `w_ih: [3h, in]`, a recurrent
//! projection `u_hh: [3h, h]`, and one bias per side, `b_ih`/`b_hh: [3h]`:
//!
//! ```text
//! z_t = sigmoid(W_z x_t + b_iz + U_z h_{t-1} + b_hz)
//! r_t = sigmoid(W_r x_t + b_ir + U_r h_{t-1} + b_hr)
//! n_t = tanh(W_n x_t + b_in + r_t * (U_n h_{t-1} + b_hn))
//! h_t = (1 - z_t) * n_t + z_t * h_{t-1}
//! ```
//!
//! The whole unrolled recurrence is one graph node; its backward step runs
//! the time loop in reverse and batches the parameter gradients into matrix
//! products.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::graph::{Backward, GradSink, Graph, VarId};
use crate::nn::tensor::{Element, Tensor};

#[inline]
fn sigmoid<E: Element>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

struct GruBack<E: Element> {
    x: VarId,
    w_ih: VarId,
    u_hh: VarId,
    b_ih: VarId,
    b_hh: VarId,
    xv: Arc<Vec<E>>,
    wv: Arc<Vec<E>>,
    uv: Arc<Vec<E>>,
    /// Forward state by position `t`: the hidden state entering that step,
    /// the three gate activations, and the recurrent candidate term
    /// `s = U_n h + b_hn`.
    hprev: Vec<E>,
    z: Vec<E>,
    r: Vec<E>,
    n: Vec<E>,
    s: Vec<E>,
    t_len: usize,
    in_dim: usize,
    h: usize,
    reverse: bool,
}

impl<E: Element> Backward<E> for GruBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        let (t_len, h) = (self.t_len, self.h);
        let h3 = 3 * h;
        let one = E::one();
        // Pre-activation gradients by position: input-side (gates z, r, n)
        // and hidden-side (z, r, and the candidate term s).
        let mut da3 = vec![E::zero(); t_len * h3];
        let mut dh3 = vec![E::zero(); t_len * h3];
        let mut dh_carry = vec![E::zero(); h];
        let mut dh_next = vec![E::zero(); h];

        for step in 0..t_len {
            // Visit positions opposite to the forward order.
            let t = if self.reverse { step } else { t_len - 1 - step };
            let base = t * h;
            let row_a = &mut da3[t * h3..(t + 1) * h3];
            let row_h = &mut dh3[t * h3..(t + 1) * h3];
            for i in 0..h {
                let dh = grad_out[base + i] + dh_carry[i];
                let (z, r, n, s, hp) = (
                    self.z[base + i],
                    self.r[base + i],
                    self.n[base + i],
                    self.s[base + i],
                    self.hprev[base + i],
                );
                let dz = dh * (hp - n);
                let dn = dh * (one - z);
                let da_n = dn * (one - n * n);
                let dr = da_n * s;
                let ds = da_n * r;
                let da_z = dz * z * (one - z);
                let da_r = dr * r * (one - r);
                row_a[i] = da_z;
                row_a[h + i] = da_r;
                row_a[2 * h + i] = da_n;
                row_h[i] = da_z;
                row_h[h + i] = da_r;
                row_h[2 * h + i] = ds;
                dh_next[i] = dh * z;
            }
            // dh_prev += U_hhᵀ @ [da_z | da_r | ds]
            for row in 0..h3 {
                let c = row_h[row];
                if c != E::zero() {
                    let u_row = &self.uv[row * h..(row + 1) * h];
                    for (d, &u) in dh_next.iter_mut().zip(u_row) {
                        *d += u * c;
                    }
                }
            }
            std::mem::swap(&mut dh_carry, &mut dh_next);
            dh_next.iter_mut().for_each(|v| *v = E::zero());
        }

        if sink.wants(self.w_ih) {
            let buf = sink.buf(self.w_ih, h3 * self.in_dim);
            E::gemm(h3, t_len, self.in_dim, one, &da3, true, &self.xv, false, one, buf);
        }
        if sink.wants(self.u_hh) {
            let buf = sink.buf(self.u_hh, h3 * h);
            E::gemm(h3, t_len, h, one, &dh3, true, &self.hprev, false, one, buf);
        }
        if sink.wants(self.b_ih) {
            let buf = sink.buf(self.b_ih, h3);
            for t in 0..t_len {
                for (b, &g) in buf.iter_mut().zip(&da3[t * h3..(t + 1) * h3]) {
                    *b += g;
                }
            }
        }
        if sink.wants(self.b_hh) {
            let buf = sink.buf(self.b_hh, h3);
            for t in 0..t_len {
                for (b, &g) in buf.iter_mut().zip(&dh3[t * h3..(t + 1) * h3]) {
                    *b += g;
                }
            }
        }
        if sink.wants(self.x) {
            let buf = sink.buf(self.x, t_len * self.in_dim);
            E::gemm(t_len, h3, self.in_dim, one, &da3, false, &self.wv, false, one, buf);
        }
    }
}

impl<E: Element> Graph<E> {
    /// Runs one GRU direction over `x: [t, in]`, producing hidden states
    /// `[t, h]` aligned with input positions. With `reverse` the recurrence
    /// consumes the sequence back-to-front (output stays position-aligned),
    /// which is the "process the reversed sequence, then reverse the
    /// output" convention. The initial hidden state is zero.
    pub fn gru(
        &mut self,
        x: VarId,
        w_ih: VarId,
        u_hh: VarId,
        b_ih: VarId,
        b_hh: VarId,
        reverse: bool,
    ) -> Result<VarId> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::Shape(format!(
                "gru input must be [t, in], got {:?}",
                xv.shape()
            )));
        }
        let (t_len, in_dim) = (xv.dim(0), xv.dim(1));
        let uv = self.value(u_hh);
        if uv.rank() != 2 || uv.dim(0) != 3 * uv.dim(1) {
            return Err(Error::Shape(format!(
                "gru recurrent weights must be [3h, h], got {:?}",
                uv.shape()
            )));
        }
        let h = uv.dim(1);
        let h3 = 3 * h;
        let wv = self.value(w_ih);
        if wv.shape() != [h3, in_dim] {
            return Err(Error::Shape(format!(
                "gru input weights must be [{h3}, {in_dim}], got {:?}",
                wv.shape()
            )));
        }
        for (name, id) in [("b_ih", b_ih), ("b_hh", b_hh)] {
            let v = self.value(id);
            if v.rank() != 1 || v.len() != h3 {
                return Err(Error::Shape(format!(
                    "gru {name} must be [{h3}], got {:?}",
                    v.shape()
                )));
            }
        }
        if t_len == 0 {
            return Err(Error::Shape("gru over an empty sequence".into()));
        }

        let xd = xv.data_arc();
        let wd = wv.data_arc();
        let ud = uv.data_arc();
        let bi = self.value(b_ih).data_arc();
        let bh = self.value(b_hh).data_arc();

        // Input-side pre-activations for all steps at once: A = x W_ihᵀ + b_ih.
        let mut a = vec![E::zero(); t_len * h3];
        E::gemm(t_len, in_dim, h3, E::one(), &xd, false, &wd, true, E::zero(), &mut a);
        for t in 0..t_len {
            for (v, &b) in a[t * h3..(t + 1) * h3].iter_mut().zip(bi.iter()) {
                *v += b;
            }
        }

        let mut out = vec![E::zero(); t_len * h];
        let mut hprev = vec![E::zero(); t_len * h];
        let mut zs = vec![E::zero(); t_len * h];
        let mut rs = vec![E::zero(); t_len * h];
        let mut ns = vec![E::zero(); t_len * h];
        let mut ss = vec![E::zero(); t_len * h];
        let mut hstate = vec![E::zero(); h];
        let mut s3 = vec![E::zero(); h3];

        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            // s3 = U_hh h + b_hh
            s3.copy_from_slice(&bh);
            for (row, s) in s3.iter_mut().enumerate() {
                let u_row = &ud[row * h..(row + 1) * h];
                let mut acc = E::zero();
                for (u, &hv) in u_row.iter().zip(&hstate) {
                    acc += *u * hv;
                }
                *s += acc;
            }
            let arow = &a[t * h3..(t + 1) * h3];
            let base = t * h;
            hprev[base..base + h].copy_from_slice(&hstate);
            for i in 0..h {
                let z = sigmoid(arow[i] + s3[i]);
                let r = sigmoid(arow[h + i] + s3[h + i]);
                let s = s3[2 * h + i];
                let n = (arow[2 * h + i] + r * s).tanh();
                let hn = (E::one() - z) * n + z * hstate[i];
                zs[base + i] = z;
                rs[base + i] = r;
                ns[base + i] = n;
                ss[base + i] = s;
                out[base + i] = hn;
                hstate[i] = hn;
            }
        }

        let needs = self.any_needs_grad(&[x, w_ih, u_hh, b_ih, b_hh]);
        let back = needs.then(|| {
            Box::new(GruBack {
                x,
                w_ih,
                u_hh,
                b_ih,
                b_hh,
                xv: xd,
                wv: wd,
                uv: ud,
                hprev,
                z: zs,
                r: rs,
                n: ns,
                s: ss,
                t_len,
                in_dim,
                h,
                reverse,
            }) as Box<_>
        });
        Ok(self.push(Tensor::matrix(t_len, h, out), needs, back))
    }

    /// Bidirectional GRU: runs both directions over `x: [t, in]` and
    /// concatenates their states per position into `[t, 2h]`, forward half
    /// first.
    #[allow(clippy::too_many_arguments)]
    pub fn bigru(
        &mut self,
        x: VarId,
        fwd: (VarId, VarId, VarId, VarId),
        bwd: (VarId, VarId, VarId, VarId),
    ) -> Result<VarId> {
        let f = self.gru(x, fwd.0, fwd.1, fwd.2, fwd.3, false)?;
        let b = self.gru(x, bwd.0, bwd.1, bwd.2, bwd.3, true)?;
        self.concat_cols(f, b)
    }
}
