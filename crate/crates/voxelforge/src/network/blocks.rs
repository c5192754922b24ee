//! Activation, residual block, and decoder upsampling, each with exact
//! backward passes.

use super::conv::{conv3d_backward, conv3d_forward, Conv3Params, ConvGrads};
use super::tensor::{Scalar, Tensor5};
use super::NetworkError;
use rand_chacha::ChaCha8Rng;

pub fn relu_forward<T: Scalar>(x: &Tensor5<T>) -> Tensor5<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// d/dx relu at the cached pre-activation input.
pub fn relu_backward<T: Scalar>(x: &Tensor5<T>, grad_y: &Tensor5<T>) -> Tensor5<T> {
    debug_assert_eq!(x.shape(), grad_y.shape());
    let mut out = grad_y.clone();
    for (g, v) in out.data_mut().iter_mut().zip(x.data()) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
    out
}

/// Two same-padded convolutions with an identity skip:
/// `y = relu(x + conv2(relu(conv1(x))))`. Padding equals the dilation so
/// spatial dims are preserved for 3-cubed kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv3Params<T>,
    pub conv2: Conv3Params<T>,
    pub dilation: usize,
}

/// Intermediate activations needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ResCache<T> {
    x: Tensor5<T>,
    a1: Tensor5<T>,
    r1: Tensor5<T>,
    sum: Tensor5<T>,
}

#[derive(Debug, Clone)]
pub struct ResGrads<T> {
    pub conv1: ConvGrads<T>,
    pub conv2: ConvGrads<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn he_init(
        channels: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        let k = [3, 3, 3];
        Ok(Self {
            conv1: Conv3Params::he_init(channels, channels, k, 1, dilation, dilation, rng)?,
            conv2: Conv3Params::he_init(channels, channels, k, 1, dilation, dilation, rng)?,
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor5<T>) -> Result<(Tensor5<T>, ResCache<T>), NetworkError> {
        if x.shape()[1] != self.conv1.c_in {
            return Err(NetworkError::ChannelMismatch {
                got: x.shape()[1],
                expected: self.conv1.c_in,
            });
        }
        let a1 = conv3d_forward(x, &self.conv1)?;
        let r1 = relu_forward(&a1);
        let a2 = conv3d_forward(&r1, &self.conv2)?;
        let sum = x.add(&a2)?;
        let y = relu_forward(&sum);
        Ok((y, ResCache { x: x.clone(), a1, r1, sum }))
    }

    pub fn backward(
        &self,
        cache: &ResCache<T>,
        grad_y: &Tensor5<T>,
    ) -> Result<(Tensor5<T>, ResGrads<T>), NetworkError> {
        let g_sum = relu_backward(&cache.sum, grad_y);
        let (g_r1, g_conv2) = conv3d_backward(&cache.r1, &self.conv2, &g_sum)?;
        let g_a1 = relu_backward(&cache.a1, &g_r1);
        let (g_x1, g_conv1) = conv3d_backward(&cache.x, &self.conv1, &g_a1)?;
        // Identity skip adds the post-sum gradient straight through.
        let grad_x = g_x1.add(&g_sum)?;
        Ok((grad_x, ResGrads { conv1: g_conv1, conv2: g_conv2 }))
    }
}

/// Nearest-neighbor upsample to `target` spatial dims; each source voxel
/// covers up to 2 output voxels per axis (`source index = output >> 1`).
/// Requires `ceil(target/2) == input` per axis, the inverse of a stride-2
/// convolution's size map.
pub fn upsample_nearest<T: Scalar>(
    x: &Tensor5<T>,
    target: [usize; 3],
) -> Result<Tensor5<T>, NetworkError> {
    let [n, c, d, h, w] = x.shape();
    let expect = [target[0].div_ceil(2), target[1].div_ceil(2), target[2].div_ceil(2)];
    if [d, h, w] != expect {
        return Err(NetworkError::ShapeMismatch {
            got: vec![d, h, w],
            expected: expect.to_vec(),
        });
    }
    let [td, th, tw] = target;
    let mut out = Tensor5::zeros([n, c, td, th, tw]);
    for ni in 0..n {
        for ci in 0..c {
            for od in 0..td {
                for oh in 0..th {
                    for ow in 0..tw {
                        let v = x.get(ni, ci, od >> 1, oh >> 1, ow >> 1);
                        out.set(ni, ci, od, oh, ow, v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`upsample_nearest`]: sums each output voxel's gradient into
/// its source.
pub fn upsample_nearest_backward<T: Scalar>(
    input_shape: [usize; 5],
    grad_y: &Tensor5<T>,
) -> Tensor5<T> {
    let [n, c, td, th, tw] = grad_y.shape();
    debug_assert_eq!([n, c], [input_shape[0], input_shape[1]]);
    let mut out = Tensor5::zeros(input_shape);
    for ni in 0..n {
        for ci in 0..c {
            for od in 0..td {
                for oh in 0..th {
                    for ow in 0..tw {
                        let i = out.index(ni, ci, od >> 1, oh >> 1, ow >> 1);
                        out.data_mut()[i] += grad_y.get(ni, ci, od, oh, ow);
                    }
                }
            }
        }
    }
    out
}
