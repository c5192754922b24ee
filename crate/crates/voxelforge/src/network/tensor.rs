//! Dense 5-axis tensors with (n, c, d, h, w) shape, w-fastest layout.
//!
//! The spatial axes map to the voxel grid as (d, h, w) = (z, y, x), so a
//! tensor's flat spatial order matches the x-fastest volume layout and
//! volumes convert to channels without reshuffling.

use super::NetworkError;
use num_traits::Float;

/// Scalar type for network math: f32 for training, f64 for gradient checks.
pub trait Scalar:
    Float + std::ops::AddAssign + std::ops::SubAssign + std::ops::MulAssign + std::ops::DivAssign + std::fmt::Debug
    + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    shape: [usize; 5],
    data: Vec<T>,
}

impl<T: Scalar> Tensor5<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self, NetworkError> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(NetworkError::ShapeMismatch {
                got: vec![data.len()],
                expected: vec![shape.iter().product()],
            });
        }
        Ok(Self { shape, data })
    }

    /// (n, c, d, h, w)
    pub fn shape(&self) -> [usize; 5] {
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

    #[inline]
    pub fn index(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> usize {
        debug_assert!(
            n < self.shape[0]
                && c < self.shape[1]
                && d < self.shape[2]
                && h < self.shape[3]
                && w < self.shape[4]
        );
        (((n * self.shape[1] + c) * self.shape[2] + d) * self.shape[3] + h) * self.shape[4] + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, d: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, d, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, d: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, d, h, w);
        self.data[i] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Self) -> Result<Self, NetworkError> {
        if self.shape != other.shape {
            return Err(NetworkError::ShapeMismatch {
                got: other.shape.to_vec(),
                expected: self.shape.to_vec(),
            });
        }
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| a + b).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor5<U> {
        Tensor5 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Stacks `b` after `a` along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self, NetworkError> {
        let ([n, ca, d, h, w], sb) = (a.shape, b.shape);
        if [n, d, h, w] != [sb[0], sb[2], sb[3], sb[4]] {
            return Err(NetworkError::ShapeMismatch {
                got: sb.to_vec(),
                expected: a.shape.to_vec(),
            });
        }
        let cb = sb[1];
        let mut out = Self::zeros([n, ca + cb, d, h, w]);
        let plane = d * h * w;
        for ni in 0..n {
            for c in 0..ca {
                let src = a.index(ni, c, 0, 0, 0);
                let dst = out.index(ni, c, 0, 0, 0);
                out.data[dst..dst + plane].copy_from_slice(&a.data[src..src + plane]);
            }
            for c in 0..cb {
                let src = b.index(ni, c, 0, 0, 0);
                let dst = out.index(ni, ca + c, 0, 0, 0);
                out.data[dst..dst + plane].copy_from_slice(&b.data[src..src + plane]);
            }
        }
        Ok(out)
    }

    /// Splits the channel axis at `c_split` into two tensors.
    pub fn split_channels(&self, c_split: usize) -> (Self, Self) {
        let [n, c, d, h, w] = self.shape;
        assert!(c_split <= c, "split point past channel count");
        let mut a = Self::zeros([n, c_split, d, h, w]);
        let mut b = Self::zeros([n, c - c_split, d, h, w]);
        let plane = d * h * w;
        for ni in 0..n {
            for ci in 0..c {
                let src = self.index(ni, ci, 0, 0, 0);
                let (t, tc) = if ci < c_split { (&mut a, ci) } else { (&mut b, ci - c_split) };
                let dst = t.index(ni, tc, 0, 0, 0);
                t.data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_w_fastest() {
        let t = Tensor5::<f32>::zeros([2, 3, 4, 5, 6]);
        assert_eq!(t.index(0, 0, 0, 0, 0), 0);
        assert_eq!(t.index(0, 0, 0, 0, 1), 1);
        assert_eq!(t.index(0, 0, 0, 1, 0), 6);
        assert_eq!(t.index(0, 0, 1, 0, 0), 30);
        assert_eq!(t.index(0, 1, 0, 0, 0), 120);
        assert_eq!(t.index(1, 0, 0, 0, 0), 360);
        assert_eq!(t.len(), 720);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor5::<f32>::from_vec([1, 1, 2, 2, 2], vec![0.0; 7]).is_err());
        assert!(Tensor5::<f32>::from_vec([1, 1, 2, 2, 2], vec![0.0; 8]).is_ok());
    }

    #[test]
    fn concat_then_split_round_trips() {
        let mut a = Tensor5::<f64>::zeros([2, 2, 2, 2, 2]);
        let mut b = Tensor5::<f64>::zeros([2, 3, 2, 2, 2]);
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = i as f64;
        }
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = 1000.0 + i as f64;
        }
        let c = Tensor5::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), [2, 5, 2, 2, 2]);
        assert_eq!(c.get(1, 0, 1, 0, 1), a.get(1, 0, 1, 0, 1));
        assert_eq!(c.get(1, 3, 1, 0, 1), b.get(1, 1, 1, 0, 1));
        let (a2, b2) = c.split_channels(2);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn concat_rejects_mismatched_spatial_dims() {
        let a = Tensor5::<f32>::zeros([1, 2, 2, 2, 2]);
        let b = Tensor5::<f32>::zeros([1, 2, 2, 2, 3]);
        assert!(Tensor5::concat_channels(&a, &b).is_err());
    }

    #[test]
    fn cast_preserves_values() {
        let a = Tensor5::<f32>::from_vec([1, 1, 1, 1, 3], vec![0.5, -1.25, 3.0]).unwrap();
        let b: Tensor5<f64> = a.cast();
        assert_eq!(b.data(), &[0.5, -1.25, 3.0]);
    }
}
