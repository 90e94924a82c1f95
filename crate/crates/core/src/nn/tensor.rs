//! Dense tensors over `f32`/`f64` with copy-on-write storage.

use std::sync::Arc;

/// Scalar types the network kernels run on.
///
/// `f32` is the production type; `f64` exists so gradients can be verified
/// against finite differences at full precision.
pub trait Element:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a @ b + beta * c` for row-major contiguous buffers.
    ///
    /// `a` is logically `[m, k]` (stored transposed when `ta`), `b` is
    /// `[k, n]` (stored transposed when `tb`), `c` is `[m, n]`.
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        ta: bool,
        b: &[Self],
        tb: bool,
        beta: Self,
        c: &mut [Self],
    );
}

macro_rules! impl_element {
    ($ty:ty, $gemm:path) => {
        impl Element for $ty {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $ty
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                ta: bool,
                b: &[Self],
                tb: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k, "gemm: a has {} < {}", a.len(), m * k);
                assert!(b.len() >= k * n, "gemm: b has {} < {}", b.len(), k * n);
                assert!(c.len() >= m * n, "gemm: c has {} < {}", c.len(), m * n);
                let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
                let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
                // Lengths were checked above and the strides describe
                // in-bounds views of those buffers.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

/// A dense row-major tensor. Cloning is cheap: the buffer is shared until
/// someone writes through [`Tensor::data_mut`].
#[derive(Debug, Clone)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor; `data.len()` must equal the product of `shape`.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Tensor<E> {
        let shape = shape.into();
        let want: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            want,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor<E> {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor::new(shape, vec![E::zero(); len])
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: E) -> Tensor<E> {
        let shape = shape.into();
        let len = shape.iter().product();
        Tensor::new(shape, vec![v; len])
    }

    pub fn scalar(v: E) -> Tensor<E> {
        Tensor::new(Vec::new(), vec![v])
    }

    pub fn vector(data: Vec<E>) -> Tensor<E> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<E>) -> Tensor<E> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_f32_slice(shape: impl Into<Vec<usize>>, data: &[f32]) -> Tensor<E> {
        Tensor::new(
            shape,
            data.iter().map(|&v| E::from_f64(v as f64)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of dimension `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.is_empty()
    }

    /// The value of a scalar tensor.
    pub fn item(&self) -> E {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable access; unshares the buffer if it is aliased.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn with_requires_grad(mut self, on: bool) -> Tensor<E> {
        self.requires_grad = on;
        self
    }

    /// Reinterprets the buffer under a new shape of the same total size.
    pub fn reshaped(&self, shape: impl Into<Vec<usize>>) -> Tensor<E> {
        let shape = shape.into();
        let want: usize = shape.iter().product();
        assert_eq!(want, self.len(), "reshape {:?} -> {:?}", self.shape, shape);
        Tensor {
            shape,
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| Element::to_f64(v)).collect(),
        )
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data
            .iter()
            .map(|&v| Element::to_f64(v) as f32)
            .collect()
    }

    /// True when every entry is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<E: Element> PartialEq for Tensor<E> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && *self.data == *other.data
    }
}
