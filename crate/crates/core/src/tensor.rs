//! Rank-4 tensors in `(batch, channel, height, width)` row-major layout.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f32` (runtime default) and
/// `f64` (gradient checks).
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `c = alpha * a * b + beta * c` with arbitrary strides, `a` is `m x k`
    /// and `b` is `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows as isize - 1) as usize * rs.unsigned_abs()
        + (cols as isize - 1) as usize * cs.unsigned_abs()
        + 1
}

macro_rules! impl_scalar {
    ($t:ty, $bytes:expr, $gemm:path) => {
        impl Scalar for $t {
            const BYTES: usize = $bytes;

            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn f64(self) -> f64 {
                self as f64
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; $bytes];
                buf.copy_from_slice(&bytes[..$bytes]);
                <$t>::from_le_bytes(buf)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every pointer range was bounds-checked above and
                // all strides are non-negative.
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
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, 4, matrixmultiply::sgemm);
impl_scalar!(f64, 8, matrixmultiply::dgemm);

/// Tensor dimensions `(n, c, h, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per batch item.
    pub const fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values do not fill shape {shape}", data.len()),
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Tensor4 {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    /// Per-channel vector stored as `(1, len, 1, 1)`.
    pub fn vector(values: &[T]) -> Self {
        Tensor4 {
            shape: Shape::new(1, values.len(), 1, 1),
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// Value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("shape {} is not a scalar", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {} as {shape}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Slice of one batch item.
    pub fn item_slice(&self, n: usize) -> &[T] {
        let l = self.shape.item_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn item_slice_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.shape.item_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    /// Copy of batch items `start..start + count`.
    pub fn batch_range(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.n {
            return Err(Error::shape(
                "batch_range",
                format!("items {start}..{} out of {}", start + count, self.shape.n),
            ));
        }
        let l = self.shape.item_len();
        let shape = Shape {
            n: count,
            ..self.shape
        };
        Ok(Tensor4 {
            shape,
            data: self.data[start * l..(start + count) * l].to_vec(),
        })
    }

    /// Concatenates tensors along the batch axis.
    pub fn concat_batch(parts: &[Tensor4<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Invalid("concat of zero tensors".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.shape.item_len() != first.item_len()
                || (p.shape.c, p.shape.h, p.shape.w) != (first.c, first.h, first.w)
            {
                return Err(Error::shape(
                    "concat_batch",
                    format!("{} vs {}", p.shape, first),
                ));
            }
            data.extend_from_slice(&p.data);
            n += p.shape.n;
        }
        Ok(Tensor4 {
            shape: Shape { n, ..first },
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4<T>, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape("zip_map", other.shape)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor4<T>) -> Result<()> {
        self.expect_shape("add_assign", other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor4<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.f64() - b.f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Converts element precision.
    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, other: Shape) -> Result<()> {
        if self.shape != other {
            return Err(Error::shape(op, format!("{} vs {}", self.shape, other)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major_nchw() {
        let t = Tensor4::<f64>::from_f64(
            Shape::new(2, 3, 4, 5),
            &(0..120).map(|v| v as f64).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.at(1, 0, 0, 0), 60.0);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor4::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }
}
