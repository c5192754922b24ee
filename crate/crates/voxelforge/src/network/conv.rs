//! Dilated 3D cross-correlation with exact hand-derived gradients.
//!
//! Output spatial size per axis is `floor((in + 2p - dil*(k-1) - 1)/s) + 1`.
//! Work is parallelized over channel slices; each output element is owned
//! by exactly one task with a fixed accumulation order, so results are
//! bit-identical under any thread count.

use super::tensor::{Scalar, Tensor5};
use super::NetworkError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Weights laid out (c_out, c_in, kd, kh, kw), w-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3Params<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub c_out: usize,
    pub c_in: usize,
    pub kernel: [usize; 3],
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

/// Gradients mirroring [`Conv3Params`] weight and bias layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv3Params<T> {
    pub fn zeros(
        c_out: usize,
        c_in: usize,
        kernel: [usize; 3],
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self, NetworkError> {
        if kernel.iter().any(|k| *k == 0 || k % 2 == 0) {
            return Err(NetworkError::BadKernel(kernel));
        }
        if stride == 0 || dilation == 0 {
            return Err(NetworkError::BadStrideDilation { stride, dilation });
        }
        let wlen = c_out * c_in * kernel.iter().product::<usize>();
        Ok(Self {
            weights: vec![T::zero(); wlen],
            bias: vec![T::zero(); c_out],
            c_out,
            c_in,
            kernel,
            stride,
            dilation,
            padding,
        })
    }

    /// He fan-in initialization (normal, sd = sqrt(2/fan_in)), zero bias.
    pub fn he_init(
        c_out: usize,
        c_in: usize,
        kernel: [usize; 3],
        stride: usize,
        dilation: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NetworkError> {
        let mut p = Self::zeros(c_out, c_in, kernel, stride, dilation, padding)?;
        let fan_in = c_in * kernel.iter().product::<usize>();
        let sd = (2.0 / fan_in as f64).sqrt();
        for w in p.weights.iter_mut() {
            *w = T::from_f64(sd * sample_standard_normal(rng));
        }
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Output spatial dims for an input of the given spatial dims.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3], NetworkError> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let span = self.dilation * (self.kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.padding;
            if padded < span {
                return Err(NetworkError::EmptyOutput { input });
            }
            out[a] = (padded - span) / self.stride + 1;
        }
        Ok(out)
    }

    pub fn grads_zero(&self) -> ConvGrads<T> {
        ConvGrads { weights: vec![T::zero(); self.weights.len()], bias: vec![T::zero(); self.c_out] }
    }
}

/// Box-Muller draw; u1 is kept away from zero so the log stays finite.
fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn conv3d_forward<T: Scalar>(
    x: &Tensor5<T>,
    p: &Conv3Params<T>,
) -> Result<Tensor5<T>, NetworkError> {
    let [n, c, d, h, w] = x.shape();
    if c != p.c_in {
        return Err(NetworkError::ChannelMismatch { got: c, expected: p.c_in });
    }
    let [od_n, oh_n, ow_n] = p.output_dims([d, h, w])?;
    let mut out = Tensor5::zeros([n, p.c_out, od_n, oh_n, ow_n]);
    let (s, dil, pad) = (p.stride, p.dilation, p.padding as isize);
    let [kd, kh, kw] = p.kernel;
    let x_data = x.data();
    let out_plane = od_n * oh_n * ow_n;
    out.data_mut().par_chunks_mut(out_plane).enumerate().for_each(|(nc, chunk)| {
        let (ni, co) = (nc / p.c_out, nc % p.c_out);
        chunk.fill(p.bias[co]);
        for ci in 0..p.c_in {
            let x_base = ((ni * p.c_in) + ci) * d * h * w;
            let w_base = ((co * p.c_in) + ci) * kd * kh * kw;
            for od in 0..od_n {
                for kdi in 0..kd {
                    let id = (od * s + kdi * dil) as isize - pad;
                    if id < 0 || id >= d as isize {
                        continue;
                    }
                    for oh in 0..oh_n {
                        for khi in 0..kh {
                            let ih = (oh * s + khi * dil) as isize - pad;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let x_row = x_base + (id as usize * h + ih as usize) * w;
                            let w_row = w_base + (kdi * kh + khi) * kw;
                            let o_row = (od * oh_n + oh) * ow_n;
                            for ow in 0..ow_n {
                                let mut acc = chunk[o_row + ow];
                                for kwi in 0..kw {
                                    let iw = (ow * s + kwi * dil) as isize - pad;
                                    if iw >= 0 && iw < w as isize {
                                        acc += x_data[x_row + iw as usize]
                                            * p.weights[w_row + kwi];
                                    }
                                }
                                chunk[o_row + ow] = acc;
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Exact gradients of [`conv3d_forward`] with respect to input, weights,
/// and bias.
pub fn conv3d_backward<T: Scalar>(
    x: &Tensor5<T>,
    p: &Conv3Params<T>,
    grad_out: &Tensor5<T>,
) -> Result<(Tensor5<T>, ConvGrads<T>), NetworkError> {
    let [n, c, d, h, w] = x.shape();
    if c != p.c_in {
        return Err(NetworkError::ChannelMismatch { got: c, expected: p.c_in });
    }
    let [od_n, oh_n, ow_n] = p.output_dims([d, h, w])?;
    let expected = [n, p.c_out, od_n, oh_n, ow_n];
    if grad_out.shape() != expected {
        return Err(NetworkError::ShapeMismatch {
            got: grad_out.shape().to_vec(),
            expected: expected.to_vec(),
        });
    }
    let (s, dil, pad) = (p.stride, p.dilation, p.padding as isize);
    let [kd, kh, kw] = p.kernel;
    let klen = kd * kh * kw;
    let g_data = grad_out.data();
    let x_data = x.data();

    let mut grads = p.grads_zero();
    // Weight and bias gradients, one task per output channel.
    grads
        .weights
        .par_chunks_mut(p.c_in * klen)
        .zip(grads.bias.par_iter_mut())
        .enumerate()
        .for_each(|(co, (w_chunk, b_out))| {
            for ni in 0..n {
                let g_base = ((ni * p.c_out) + co) * od_n * oh_n * ow_n;
                for od in 0..od_n {
                    for oh in 0..oh_n {
                        for ow in 0..ow_n {
                            let g = g_data[g_base + (od * oh_n + oh) * ow_n + ow];
                            if g == T::zero() {
                                continue;
                            }
                            *b_out += g;
                            for ci in 0..p.c_in {
                                let x_base = ((ni * p.c_in) + ci) * d * h * w;
                                let w_base = ci * klen;
                                for kdi in 0..kd {
                                    let id = (od * s + kdi * dil) as isize - pad;
                                    if id < 0 || id >= d as isize {
                                        continue;
                                    }
                                    for khi in 0..kh {
                                        let ih = (oh * s + khi * dil) as isize - pad;
                                        if ih < 0 || ih >= h as isize {
                                            continue;
                                        }
                                        let x_row = x_base + (id as usize * h + ih as usize) * w;
                                        let w_row = w_base + (kdi * kh + khi) * kw;
                                        for kwi in 0..kw {
                                            let iw = (ow * s + kwi * dil) as isize - pad;
                                            if iw >= 0 && iw < w as isize {
                                                w_chunk[w_row + kwi] +=
                                                    g * x_data[x_row + iw as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    // Input gradient, one task per (sample, input channel) slice.
    let mut grad_x = Tensor5::zeros(x.shape());
    grad_x.data_mut().par_chunks_mut(d * h * w).enumerate().for_each(|(nc, chunk)| {
        let (ni, ci) = (nc / p.c_in, nc % p.c_in);
        for co in 0..p.c_out {
            let g_base = ((ni * p.c_out) + co) * od_n * oh_n * ow_n;
            let w_base = ((co * p.c_in) + ci) * klen;
            for od in 0..od_n {
                for oh in 0..oh_n {
                    for ow in 0..ow_n {
                        let g = g_data[g_base + (od * oh_n + oh) * ow_n + ow];
                        if g == T::zero() {
                            continue;
                        }
                        for kdi in 0..kd {
                            let id = (od * s + kdi * dil) as isize - pad;
                            if id < 0 || id >= d as isize {
                                continue;
                            }
                            for khi in 0..kh {
                                let ih = (oh * s + khi * dil) as isize - pad;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                let row = (id as usize * h + ih as usize) * w;
                                let w_row = w_base + (kdi * kh + khi) * kw;
                                for kwi in 0..kw {
                                    let iw = (ow * s + kwi * dil) as isize - pad;
                                    if iw >= 0 && iw < w as isize {
                                        chunk[row + iw as usize] += g * p.weights[w_row + kwi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_tensor(shape: [usize; 5], seed: u64) -> Tensor5<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor5::from_vec(shape, data).unwrap()
    }

    fn random_conv(
        c_out: usize,
        c_in: usize,
        kernel: [usize; 3],
        stride: usize,
        dilation: usize,
        padding: usize,
        seed: u64,
    ) -> Conv3Params<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Conv3Params::zeros(c_out, c_in, kernel, stride, dilation, padding).unwrap();
        for w in p.weights.iter_mut() {
            *w = rng.gen_range(-1.0..1.0);
        }
        for b in p.bias.iter_mut() {
            *b = rng.gen_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = random_tensor([2, 3, 4, 4, 4], 1);
        let mut p = Conv3Params::<f64>::zeros(3, 3, [1, 1, 1], 1, 1, 0).unwrap();
        for c in 0..3 {
            p.weights[c * 3 + c] = 1.0;
        }
        let y = conv3d_forward(&x, &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_neighborhood() {
        let mut p = Conv3Params::<f64>::zeros(1, 1, [3, 3, 3], 1, 1, 1).unwrap();
        p.weights.iter_mut().for_each(|w| *w = 1.0);
        let x = Tensor5::from_vec([1, 1, 4, 4, 4], vec![0.5; 64]).unwrap();
        let y = conv3d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 4, 4, 4]);
        // Interior voxels see the full 27-cell neighborhood, corners 8.
        assert!((y.get(0, 0, 1, 1, 1) - 27.0 * 0.5).abs() < 1e-12);
        assert!((y.get(0, 0, 2, 2, 2) - 27.0 * 0.5).abs() < 1e-12);
        assert!((y.get(0, 0, 0, 0, 0) - 8.0 * 0.5).abs() < 1e-12);
    }

    /// Direct 7-nested-loop reference convolution.
    fn reference_conv(x: &Tensor5<f64>, p: &Conv3Params<f64>) -> Tensor5<f64> {
        let [n, _, d, h, w] = x.shape();
        let [od_n, oh_n, ow_n] = p.output_dims([d, h, w]).unwrap();
        let [kd, kh, kw] = p.kernel;
        let mut out = Tensor5::zeros([n, p.c_out, od_n, oh_n, ow_n]);
        for ni in 0..n {
            for co in 0..p.c_out {
                for od in 0..od_n {
                    for oh in 0..oh_n {
                        for ow in 0..ow_n {
                            let mut acc = p.bias[co];
                            for ci in 0..p.c_in {
                                for kdi in 0..kd {
                                    for khi in 0..kh {
                                        for kwi in 0..kw {
                                            let id = (od * p.stride + kdi * p.dilation) as isize
                                                - p.padding as isize;
                                            let ih = (oh * p.stride + khi * p.dilation) as isize
                                                - p.padding as isize;
                                            let iw = (ow * p.stride + kwi * p.dilation) as isize
                                                - p.padding as isize;
                                            if id >= 0
                                                && (id as usize) < d
                                                && ih >= 0
                                                && (ih as usize) < h
                                                && iw >= 0
                                                && (iw as usize) < w
                                            {
                                                let wi = (((co * p.c_in + ci) * kd + kdi) * kh
                                                    + khi)
                                                    * kw
                                                    + kwi;
                                                acc += x.get(
                                                    ni,
                                                    ci,
                                                    id as usize,
                                                    ih as usize,
                                                    iw as usize,
                                                ) * p.weights[wi];
                                            }
                                        }
                                    }
                                }
                            }
                            out.set(ni, co, od, oh, ow, acc);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_reference_on_random_cases() {
        let cases = [
            (1, 1, [3, 3, 3], 1, 1, 1, [1usize, 1, 5, 5, 5]),
            (2, 3, [3, 3, 3], 2, 1, 1, [2, 3, 6, 5, 7]),
            (3, 2, [3, 3, 3], 1, 2, 2, [1, 2, 7, 7, 7]),
            (2, 2, [1, 1, 1], 1, 1, 0, [2, 2, 4, 4, 4]),
            (1, 4, [3, 1, 3], 2, 1, 1, [1, 4, 6, 6, 6]),
        ];
        for (i, &(co, ci, k, s, dil, pad, shape)) in cases.iter().enumerate() {
            let x = random_tensor(shape, 100 + i as u64);
            let p = random_conv(co, ci, k, s, dil, pad, 200 + i as u64);
            let fast = conv3d_forward(&x, &p).unwrap();
            let slow = reference_conv(&x, &p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "case {i}");
            }
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = random_tensor([1, 2, 4, 4, 4], 3);
        let p = random_conv(2, 2, [3, 3, 3], 1, 1, 1, 4);
        let go = Tensor5::zeros([1, 2, 4, 4, 4]);
        let (gx, g) = conv3d_backward(&x, &p, &go).unwrap();
        assert!(gx.data().iter().all(|v| *v == 0.0));
        assert!(g.weights.iter().all(|v| *v == 0.0));
        assert!(g.bias.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_voxel_grad_through_identity_kernel() {
        let x = random_tensor([1, 1, 3, 3, 3], 5);
        let mut p = Conv3Params::<f64>::zeros(1, 1, [1, 1, 1], 1, 1, 0).unwrap();
        p.weights[0] = 1.0;
        let mut go = Tensor5::zeros([1, 1, 3, 3, 3]);
        go.set(0, 0, 1, 2, 0, 7.0);
        let (gx, g) = conv3d_backward(&x, &p, &go).unwrap();
        assert_eq!(gx.get(0, 0, 1, 2, 0), 7.0);
        assert_eq!(gx.data().iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(g.bias[0], 7.0);
        assert!((g.weights[0] - 7.0 * x.get(0, 0, 1, 2, 0)).abs() < 1e-12);
    }

    /// Central-difference check of all three gradients through a scalar
    /// objective sum(conv(x) * probe).
    fn finite_difference_check(
        shape: [usize; 5],
        co: usize,
        k: [usize; 3],
        s: usize,
        dil: usize,
        pad: usize,
        seed: u64,
    ) {
        let ci = shape[1];
        let x = random_tensor(shape, seed);
        let p = random_conv(co, ci, k, s, dil, pad, seed + 1);
        let y = conv3d_forward(&x, &p).unwrap();
        let probe = random_tensor(y.shape(), seed + 2);
        let objective = |x_: &Tensor5<f64>, p_: &Conv3Params<f64>| {
            conv3d_forward(x_, p_)
                .unwrap()
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let (gx, g) = conv3d_backward(&x, &p, &probe).unwrap();
        let eps = 1e-5;
        let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
            let fd = (plus - minus) / (2.0 * eps);
            let denom = analytic.abs().max(fd.abs());
            if denom < 1e-8 {
                assert!((analytic - fd).abs() < 1e-8, "{what}: {analytic} vs {fd}");
            } else {
                assert!(
                    (analytic - fd).abs() / denom < 1e-6,
                    "{what}: {analytic} vs {fd}"
                );
            }
        };
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            check(gx.data()[i], objective(&xp, &p), objective(&xm, &p), "grad_x");
        }
        for i in 0..p.weights.len() {
            let mut pp = p.clone();
            pp.weights[i] += eps;
            let mut pm = p.clone();
            pm.weights[i] -= eps;
            check(g.weights[i], objective(&x, &pp), objective(&x, &pm), "grad_w");
        }
        for i in 0..p.bias.len() {
            let mut pp = p.clone();
            pp.bias[i] += eps;
            let mut pm = p.clone();
            pm.bias[i] -= eps;
            check(g.bias[i], objective(&x, &pp), objective(&x, &pm), "grad_b");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        finite_difference_check([1, 2, 4, 4, 4], 2, [3, 3, 3], 1, 1, 1, 11);
    }

    #[test]
    fn backward_matches_finite_differences_strided_dilated() {
        finite_difference_check([1, 2, 6, 5, 6], 2, [3, 3, 3], 2, 1, 1, 13);
        finite_difference_check([1, 1, 6, 6, 6], 2, [3, 3, 3], 1, 2, 2, 17);
    }

    #[test]
    fn shape_errors_are_reported() {
        let x = random_tensor([1, 2, 4, 4, 4], 19);
        let p = random_conv(1, 3, [3, 3, 3], 1, 1, 1, 20);
        assert!(matches!(
            conv3d_forward(&x, &p),
            Err(NetworkError::ChannelMismatch { got: 2, expected: 3 })
        ));
        assert!(Conv3Params::<f64>::zeros(1, 1, [2, 3, 3], 1, 1, 1).is_err());
        assert!(Conv3Params::<f64>::zeros(1, 1, [3, 3, 3], 0, 1, 1).is_err());
        let tiny = random_tensor([1, 1, 1, 1, 1], 21);
        let p = random_conv(1, 1, [3, 3, 3], 1, 1, 0, 22);
        assert!(matches!(conv3d_forward(&tiny, &p), Err(NetworkError::EmptyOutput { .. })));
    }

    #[test]
    fn he_init_is_seeded_and_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = Conv3Params::<f32>::he_init(8, 4, [3, 3, 3], 1, 1, 1, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let b = Conv3Params::<f32>::he_init(8, 4, [3, 3, 3], 1, 1, 1, &mut rng).unwrap();
        assert_eq!(a, b);
        assert!(a.bias.iter().all(|v| *v == 0.0));
        let var = a.weights.iter().map(|w| (*w as f64).powi(2)).sum::<f64>()
            / a.weights.len() as f64;
        let expected = 2.0 / (4.0 * 27.0);
        assert!((var - expected).abs() < expected * 0.5, "sample var {var} vs {expected}");
    }
}
