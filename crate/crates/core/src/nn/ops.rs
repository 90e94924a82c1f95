//! Elementwise and structural graph operations.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::graph::{Backward, GradSink, Graph, VarId};
use crate::nn::tensor::{Element, Tensor};

fn same_shape<E: Element>(g: &Graph<E>, a: VarId, b: VarId, what: &str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    Ok(())
}

struct AddBack {
    a: VarId,
    b: VarId,
}

impl<E: Element> Backward<E> for AddBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        sink.add(self.a, grad_out);
        sink.add(self.b, grad_out);
    }
}

struct SubBack {
    a: VarId,
    b: VarId,
}

impl<E: Element> Backward<E> for SubBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        sink.add(self.a, grad_out);
        if sink.wants(self.b) {
            let buf = sink.buf(self.b, grad_out.len());
            for (x, &g) in buf.iter_mut().zip(grad_out) {
                *x -= g;
            }
        }
    }
}

struct MulBack<E: Element> {
    a: VarId,
    b: VarId,
    av: Arc<Vec<E>>,
    bv: Arc<Vec<E>>,
}

impl<E: Element> Backward<E> for MulBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if sink.wants(self.a) {
            let buf = sink.buf(self.a, grad_out.len());
            for ((x, &g), &b) in buf.iter_mut().zip(grad_out).zip(self.bv.iter()) {
                *x += g * b;
            }
        }
        if sink.wants(self.b) {
            let buf = sink.buf(self.b, grad_out.len());
            for ((x, &g), &a) in buf.iter_mut().zip(grad_out).zip(self.av.iter()) {
                *x += g * a;
            }
        }
    }
}

struct ScaleBack<E: Element> {
    a: VarId,
    c: E,
}

impl<E: Element> Backward<E> for ScaleBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if sink.wants(self.a) {
            let buf = sink.buf(self.a, grad_out.len());
            for (x, &g) in buf.iter_mut().zip(grad_out) {
                *x += g * self.c;
            }
        }
    }
}

struct Relu6Back<E: Element> {
    x: VarId,
    xv: Arc<Vec<E>>,
}

impl<E: Element> Backward<E> for Relu6Back<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.x) {
            return;
        }
        let six = E::from_f64(6.0);
        let buf = sink.buf(self.x, grad_out.len());
        for ((d, &g), &x) in buf.iter_mut().zip(grad_out).zip(self.xv.iter()) {
            if x > E::zero() && x < six {
                *d += g;
            }
        }
    }
}

struct SumAllBack {
    x: VarId,
    len: usize,
}

impl<E: Element> Backward<E> for SumAllBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if sink.wants(self.x) {
            let g = grad_out[0];
            let buf = sink.buf(self.x, self.len);
            for x in buf.iter_mut() {
                *x += g;
            }
        }
    }
}

struct StackRowsBack {
    parents: Vec<VarId>,
    d: usize,
}

impl<E: Element> Backward<E> for StackRowsBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        for (i, &p) in self.parents.iter().enumerate() {
            sink.add(p, &grad_out[i * self.d..(i + 1) * self.d]);
        }
    }
}

struct MeanRowsRangeBack {
    x: VarId,
    lo: usize,
    hi: usize,
    d: usize,
    total_len: usize,
}

impl<E: Element> Backward<E> for MeanRowsRangeBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.x) {
            return;
        }
        let scale = E::one() / E::from_f64((self.hi - self.lo) as f64);
        let buf = sink.buf(self.x, self.total_len);
        for r in self.lo..self.hi {
            for (x, &g) in buf[r * self.d..(r + 1) * self.d].iter_mut().zip(grad_out) {
                *x += g * scale;
            }
        }
    }
}

struct RowBack {
    x: VarId,
    i: usize,
    d: usize,
    total_len: usize,
}

impl<E: Element> Backward<E> for RowBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.x) {
            return;
        }
        let buf = sink.buf(self.x, self.total_len);
        for (x, &g) in buf[self.i * self.d..(self.i + 1) * self.d]
            .iter_mut()
            .zip(grad_out)
        {
            *x += g;
        }
    }
}

struct ConcatColsBack {
    a: VarId,
    b: VarId,
    rows: usize,
    ca: usize,
    cb: usize,
}

impl<E: Element> Backward<E> for ConcatColsBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        let c = self.ca + self.cb;
        if sink.wants(self.a) {
            let buf = sink.buf(self.a, self.rows * self.ca);
            for r in 0..self.rows {
                for (x, &g) in buf[r * self.ca..(r + 1) * self.ca]
                    .iter_mut()
                    .zip(&grad_out[r * c..r * c + self.ca])
                {
                    *x += g;
                }
            }
        }
        if sink.wants(self.b) {
            let buf = sink.buf(self.b, self.rows * self.cb);
            for r in 0..self.rows {
                for (x, &g) in buf[r * self.cb..(r + 1) * self.cb]
                    .iter_mut()
                    .zip(&grad_out[r * c + self.ca..(r + 1) * c])
                {
                    *x += g;
                }
            }
        }
    }
}

struct ConcatChannelsBack {
    parents: Vec<(VarId, usize)>,
}

impl<E: Element> Backward<E> for ConcatChannelsBack {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        let mut off = 0;
        for &(p, len) in &self.parents {
            sink.add(p, &grad_out[off..off + len]);
            off += len;
        }
    }
}

struct CrossEntropyBack<E: Element> {
    logits: VarId,
    softmax: Vec<E>,
    target: usize,
}

impl<E: Element> Backward<E> for CrossEntropyBack<E> {
    fn apply(&self, grad_out: &[E], sink: &mut GradSink<'_, E>) {
        if !sink.wants(self.logits) {
            return;
        }
        let g = grad_out[0];
        let buf = sink.buf(self.logits, self.softmax.len());
        for (i, (x, &p)) in buf.iter_mut().zip(&self.softmax).enumerate() {
            let onehot = if i == self.target { E::one() } else { E::zero() };
            *x += g * (p - onehot);
        }
    }
}

impl<E: Element> Graph<E> {
    /// Elementwise `a + b`; shapes must match.
    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self, a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        let needs = self.any_needs_grad(&[a, b]);
        let back = needs.then(|| Box::new(AddBack { a, b }) as Box<_>);
        Ok(self.push(out, needs, back))
    }

    /// Elementwise `a - b`; shapes must match.
    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self, a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        let needs = self.any_needs_grad(&[a, b]);
        let back = needs.then(|| Box::new(SubBack { a, b }) as Box<_>);
        Ok(self.push(out, needs, back))
    }

    /// Elementwise `a * b`; shapes must match.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        same_shape(self, a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        let needs = self.any_needs_grad(&[a, b]);
        let back = needs.then(|| {
            Box::new(MulBack {
                a,
                b,
                av: self.value(a).data_arc(),
                bv: self.value(b).data_arc(),
            }) as Box<_>
        });
        Ok(self.push(out, needs, back))
    }

    /// `a * c` for a constant `c`.
    pub fn scale(&mut self, a: VarId, c: E) -> VarId {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data);
        let needs = self.needs_grad(a);
        let back = needs.then(|| Box::new(ScaleBack { a, c }) as Box<_>);
        self.push(out, needs, back)
    }

    /// `min(max(x, 0), 6)`. The gradient passes only strictly inside the
    /// clipping band `(0, 6)`.
    pub fn relu6(&mut self, x: VarId) -> VarId {
        let six = E::from_f64(6.0);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(E::zero()).min(six))
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data);
        let needs = self.needs_grad(x);
        let back = needs.then(|| {
            Box::new(Relu6Back {
                x,
                xv: self.value(x).data_arc(),
            }) as Box<_>
        });
        self.push(out, needs, back)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: VarId) -> VarId {
        let s = self.value(x).data().iter().copied().sum();
        let len = self.value(x).len();
        let needs = self.needs_grad(x);
        let back = needs.then(|| Box::new(SumAllBack { x, len }) as Box<_>);
        self.push(Tensor::scalar(s), needs, back)
    }

    /// Mean of a list of scalars, as a scalar.
    pub fn mean_scalars(&mut self, xs: &[VarId]) -> Result<VarId> {
        if xs.is_empty() {
            return Err(Error::Usage("mean of zero scalars".into()));
        }
        for &x in xs {
            if !self.value(x).is_scalar() {
                return Err(Error::Shape(format!(
                    "mean_scalars: shape {:?} is not a scalar",
                    self.value(x).shape()
                )));
            }
        }
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x)?;
        }
        Ok(self.scale(acc, E::one() / E::from_f64(xs.len() as f64)))
    }

    /// Stacks `n` vectors of length `d` into an `[n, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[VarId]) -> Result<VarId> {
        if rows.is_empty() {
            return Err(Error::Usage("stack_rows of nothing".into()));
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            if v.rank() != 1 || v.len() != d {
                return Err(Error::Shape(format!(
                    "stack_rows: expected [{d}] vectors, got {:?}",
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows.len(), d, data);
        let needs = self.any_needs_grad(rows);
        let back = needs.then(|| {
            Box::new(StackRowsBack {
                parents: rows.to_vec(),
                d,
            }) as Box<_>
        });
        Ok(self.push(out, needs, back))
    }

    /// Mean over all rows of an `[n, d]` matrix, giving `[d]`.
    pub fn mean_rows(&mut self, x: VarId) -> Result<VarId> {
        let n = self.matrix_rows(x, "mean_rows")?;
        self.mean_rows_range(x, 0, n)
    }

    /// Mean over rows `lo..hi` of an `[n, d]` matrix, giving `[d]`.
    pub fn mean_rows_range(&mut self, x: VarId, lo: usize, hi: usize) -> Result<VarId> {
        let n = self.matrix_rows(x, "mean_rows_range")?;
        if lo >= hi || hi > n {
            return Err(Error::Usage(format!(
                "mean_rows_range: rows {lo}..{hi} invalid for {n} rows"
            )));
        }
        let d = self.value(x).dim(1);
        let data = self.value(x).data();
        let scale = E::one() / E::from_f64((hi - lo) as f64);
        let mut out = vec![E::zero(); d];
        for r in lo..hi {
            for (o, &v) in out.iter_mut().zip(&data[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= scale;
        }
        let needs = self.needs_grad(x);
        let total_len = self.value(x).len();
        let back = needs.then(|| {
            Box::new(MeanRowsRangeBack {
                x,
                lo,
                hi,
                d,
                total_len,
            }) as Box<_>
        });
        Ok(self.push(Tensor::vector(out), needs, back))
    }

    /// Row `i` of an `[n, d]` matrix, as `[d]`.
    pub fn row(&mut self, x: VarId, i: usize) -> Result<VarId> {
        let n = self.matrix_rows(x, "row")?;
        if i >= n {
            return Err(Error::Usage(format!("row {i} out of range 0..{n}")));
        }
        let d = self.value(x).dim(1);
        let data = self.value(x).data()[i * d..(i + 1) * d].to_vec();
        let needs = self.needs_grad(x);
        let total_len = self.value(x).len();
        let back = needs.then(|| {
            Box::new(RowBack {
                x,
                i,
                d,
                total_len,
            }) as Box<_>
        });
        Ok(self.push(Tensor::vector(data), needs, back))
    }

    /// Concatenates `[n, ca]` and `[n, cb]` along columns into `[n, ca+cb]`.
    pub fn concat_cols(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (ra, rb) = (
            self.matrix_rows(a, "concat_cols")?,
            self.matrix_rows(b, "concat_cols")?,
        );
        if ra != rb {
            return Err(Error::Shape(format!(
                "concat_cols: row counts {ra} and {rb} differ"
            )));
        }
        let (ca, cb) = (self.value(a).dim(1), self.value(b).dim(1));
        let (da, db) = (self.value(a).data_arc(), self.value(b).data_arc());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let out = Tensor::matrix(ra, ca + cb, data);
        let needs = self.any_needs_grad(&[a, b]);
        let back = needs.then(|| {
            Box::new(ConcatColsBack {
                a,
                b,
                rows: ra,
                ca,
                cb,
            }) as Box<_>
        });
        Ok(self.push(out, needs, back))
    }

    /// Concatenates `[ch_i, t]` matrices along the channel axis into
    /// `[sum(ch_i), t]`.
    pub fn concat_channels(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::Usage("concat_channels of nothing".into()));
        }
        let t = self.value(parts[0]).dim(1);
        let mut channels = 0;
        let mut data = Vec::new();
        let mut parents = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.rank() != 2 || v.dim(1) != t {
                return Err(Error::Shape(format!(
                    "concat_channels: expected [*, {t}], got {:?}",
                    v.shape()
                )));
            }
            channels += v.dim(0);
            data.extend_from_slice(v.data());
            parents.push((p, v.len()));
        }
        let out = Tensor::matrix(channels, t, data);
        let needs = self.any_needs_grad(parts);
        let back = needs.then(|| Box::new(ConcatChannelsBack { parents }) as Box<_>);
        Ok(self.push(out, needs, back))
    }

    /// Cross-entropy of a `[c]` logit vector against class `target`,
    /// computed through a max-shifted log-sum-exp. The backward step is the
    /// fused `softmax - onehot` form.
    pub fn cross_entropy(&mut self, logits: VarId, target: usize) -> Result<VarId> {
        let v = self.value(logits);
        if v.rank() != 1 {
            return Err(Error::Shape(format!(
                "cross_entropy wants a logit vector, got {:?}",
                v.shape()
            )));
        }
        if target >= v.len() {
            return Err(Error::Usage(format!(
                "cross_entropy target {target} out of range 0..{}",
                v.len()
            )));
        }
        let data = v.data();
        let max = data.iter().copied().fold(E::neg_infinity(), E::max);
        let sum_exp: E = data.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let loss = lse - data[target];
        let needs = self.needs_grad(logits);
        let back = needs.then(|| {
            let softmax = data.iter().map(|&x| (x - lse).exp()).collect();
            Box::new(CrossEntropyBack {
                logits,
                softmax,
                target,
            }) as Box<_>
        });
        Ok(self.push(Tensor::scalar(loss), needs, back))
    }

    fn matrix_rows(&self, x: VarId, what: &str) -> Result<usize> {
        let v = self.value(x);
        if v.rank() != 2 {
            return Err(Error::Shape(format!(
                "{what} wants a matrix, got {:?}",
                v.shape()
            )));
        }
        Ok(v.dim(0))
    }
}
