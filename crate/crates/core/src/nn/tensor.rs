use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::image::Image;

/// Floating-point element type of the network code.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// `c = alpha * a b + beta * c` with row-major `m x k`, `k x n`, `m x n` strides given explicitly.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        n_stride: isize,
    );
    fn as_f32(self) -> f32;
    fn of_f32(v: f32) -> Self;
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                n_stride: isize,
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, (n_stride, 1));
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand's extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        n_stride,
                        1,
                    )
                }
            }

            fn as_f32(self) -> f32 {
                self as f32
            }

            fn of_f32(v: f32) -> Self {
                v as $t
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Self { shape, data: vec![v; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
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

    pub fn item(&self, i: usize) -> &[T] {
        let l = self.item_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.item_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "add shape");
        Self { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "sub shape");
        Self { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect() }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert_eq!(self.shape, other.shape, "axpy shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len()).expect("length fits")
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the batch axis.
    pub fn concat(parts: &[&Self]) -> Self {
        let first = parts.first().expect("at least one tensor");
        let mut shape = first.shape;
        shape[0] = 0;
        let mut data = Vec::new();
        for p in parts {
            assert_eq!(p.shape[1..], first.shape[1..], "concat item shape");
            shape[0] += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Self { shape, data }
    }

    /// Batch items `[start, end)`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let l = self.item_len();
        let mut shape = self.shape;
        shape[0] = end - start;
        Self { shape, data: self.data[start * l..end * l].to_vec() }
    }

    /// Stacks same-shaped images into a CHW batch.
    pub fn from_images(images: &[&Image]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::EmptyDataset("no images to batch".into()))?;
        let (h, w, c) = first.shape();
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            if img.shape() != (h, w, c) {
                return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", img.shape(), (h, w, c))));
            }
            data.extend(img.to_planar().into_iter().map(T::of_f32));
        }
        Ok(Self { shape: [images.len(), c, h, w], data })
    }

    /// Converts each batch item to an image, clamping into `[0, 1]`.
    pub fn to_images(&self) -> Result<Vec<Image>> {
        let [n, c, h, w] = self.shape;
        (0..n)
            .map(|i| {
                let planar: Vec<f32> = self.item(i).iter().map(|v| v.as_f32()).collect();
                Image::from_planar(h, w, c, &planar)
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|&v| U::from_f64(v.to_f64().unwrap()).unwrap()).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposed_operand() {
        // a: 2x3, b^T stored as 2x3 -> b is 3x2
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let bt = [1.0f64, 0.0, -1.0, 2.0, 1.0, 0.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, (3, 1), &bt, (1, 3), 0.0, &mut c, 2);
        assert_eq!(c, [-2.0, 4.0, -2.0, 13.0]);
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::<f32>::full([1, 2, 1, 1], 1.0);
        let b = Tensor::<f32>::full([2, 2, 1, 1], 2.0);
        let c = Tensor::concat(&[&a, &b]);
        assert_eq!(c.shape(), [3, 2, 1, 1]);
        assert_eq!(c.slice_batch(1, 3), b);
    }

    #[test]
    fn image_round_trip() {
        let img = Image::from_fn(3, 2, 3, |y, x, c| (y * 6 + x * 3 + c) as f32 / 20.0).unwrap();
        let t = Tensor::<f32>::from_images(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), [2, 3, 3, 2]);
        assert_eq!(t.to_images().unwrap()[1], img);
    }
}
