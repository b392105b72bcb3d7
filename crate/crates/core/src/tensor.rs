//! Dense row-major tensors and the scalar types they hold.
//!
//! Training and inference run in `f32`; gradient verification switches to
//! `f64`. Everything above this module is generic over [`Real`].

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Numeric precision tag stored in checkpoints and experiment logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn bits(self) -> u64 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }

    pub fn from_bits(bits: u64) -> Option<Self> {
        match bits {
            32 => Some(Precision::F32),
            64 => Some(Precision::F64),
            _ => None,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.bits())
    }
}

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const PRECISION: Precision;

    /// `c = alpha * op(a) * op(b) + beta * c` on strided row-major views.
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn get_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Row-major matrix operand for [`gemm`]; `trans` reads the stored
/// `[rows, cols]` buffer as its transpose.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            trans: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            trans: !self.trans,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out` with `out` a dense row-major `[m, n]` buffer.
pub fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.logical();
    let (kb, n) = b.logical();
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in out.iter_mut() {
            *v = *v * beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: extents were checked against slice lengths above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

/// Tensors carry up to three data axes plus an optional leading batch axis.
pub const MAX_RANK: usize = 4;

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
            return Err(Error::Argument(format!("invalid tensor shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape.to_vec(),
                right: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![value; numel]).expect("valid shape")
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Size of the trailing (channel) axis.
    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim("zip", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    /// Views the tensor as `[rows, channels]`, folding every leading axis.
    pub fn as_rows(&self) -> (usize, usize) {
        let c = self.channels();
        (self.data.len() / c, c)
    }

    /// Interprets a sequence feature (`[L, C]` or `[N, L, C]`) as `(N, L, C)`.
    pub fn seq_dims(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [l, c] => Ok((1, l, c)),
            [n, l, c] => Ok((n, l, c)),
            _ => Err(Error::Shape {
                layer: op.to_string(),
                reason: format!("expected [L, C] or [N, L, C], got {:?}", self.shape),
            }),
        }
    }

    /// Interprets an image (`[H, W, C]` or `[N, H, W, C]`) as `(N, H, W, C)`.
    pub fn image_dims(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((1, h, w, c)),
            [n, h, w, c] => Ok((n, h, w, c)),
            _ => Err(Error::Shape {
                layer: op.to_string(),
                reason: format!("expected [H, W, C] or [N, H, W, C], got {:?}", self.shape),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(&[0, 3], vec![]).is_err());
        assert!(Tensor::<f64>::new(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]], b = a^T -> a a^T = [[14,32],[32,77]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0f64; 4];
        gemm(MatRef::new(&a, 2, 3), MatRef::new(&a, 2, 3).t(), 0.0, &mut out);
        assert_eq!(out, [14.0, 32.0, 32.0, 77.0]);
        let mut out = [0.0f64; 9];
        gemm(MatRef::new(&a, 2, 3).t(), MatRef::new(&a, 2, 3), 0.0, &mut out);
        assert_eq!(out, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [1.0f32, 1.0];
        let b = [2.0f32, 3.0];
        let mut out = [10.0f32];
        gemm(MatRef::new(&a, 1, 2), MatRef::new(&b, 2, 1), 1.0, &mut out);
        assert_eq!(out, [15.0]);
    }
}
