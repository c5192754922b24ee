//! Channel softmax and the weighted categorical cross-entropy.

use super::tensor::{Scalar, Tensor5};
use super::NetworkError;
use crate::metrics::{LabelVolume, IGNORE};
use crate::occupancy::WeightTensor;

/// Per-voxel softmax over the channel axis, max-subtracted for stability.
pub fn softmax_channels<T: Scalar>(x: &Tensor5<T>) -> Tensor5<T> {
    let [n, c, d, h, w] = x.shape();
    let mut out = Tensor5::zeros(x.shape());
    let plane = d * h * w;
    for ni in 0..n {
        for v in 0..plane {
            let base = ni * c * plane + v;
            let mut m = x.data()[base];
            for ci in 1..c {
                let val = x.data()[base + ci * plane];
                if val > m {
                    m = val;
                }
            }
            let mut sum = T::zero();
            for ci in 0..c {
                let e = (x.data()[base + ci * plane] - m).exp();
                out.data_mut()[base + ci * plane] = e;
                sum += e;
            }
            for ci in 0..c {
                out.data_mut()[base + ci * plane] /= sum;
            }
        }
    }
    out
}

/// Builds one-hot targets from label volumes; IGNORE voxels get an all-zero
/// row (they are never weighted, so they contribute nothing to the loss).
pub fn labels_to_one_hot<T: Scalar>(labels: &[LabelVolume], class_count: usize) -> Tensor5<T> {
    assert!(!labels.is_empty());
    let [nx, ny, nz] = labels[0].spec().dims;
    let plane = nx * ny * nz;
    let mut out = Tensor5::zeros([labels.len(), class_count, nz, ny, nx]);
    for (ni, lab) in labels.iter().enumerate() {
        assert_eq!(lab.spec().dims, [nx, ny, nz], "mixed grid dims in one batch");
        for (v, &l) in lab.values().iter().enumerate() {
            if l == IGNORE {
                continue;
            }
            out.data_mut()[(ni * class_count + l as usize) * plane + v] = T::one();
        }
    }
    out
}

/// `L = -sum w * y * log p` over all voxels, plus the gradient of `L` with
/// respect to the logits that produced `p`, which is `w * (p - y)`.
///
/// `w` holds one weight grid per batch sample. The loss is the plain sum;
/// callers that want a mean divide by the total weight themselves.
pub fn weighted_cce<T: Scalar>(
    p: &Tensor5<T>,
    y: &Tensor5<T>,
    w: &[WeightTensor],
) -> Result<(T, Tensor5<T>), NetworkError> {
    let [n, c, d, h, wi] = p.shape();
    if y.shape() != p.shape() {
        return Err(NetworkError::ShapeMismatch {
            got: y.shape().to_vec(),
            expected: p.shape().to_vec(),
        });
    }
    if w.len() != n {
        return Err(NetworkError::ShapeMismatch { got: vec![w.len()], expected: vec![n] });
    }
    let plane = d * h * wi;
    for wt in w {
        if wt.values().len() != plane {
            return Err(NetworkError::ShapeMismatch {
                got: vec![wt.values().len()],
                expected: vec![plane],
            });
        }
    }
    // Validate p is a distribution per voxel before trusting the math.
    let tol = T::from_f64(1e-4);
    for ni in 0..n {
        for v in 0..plane {
            let base = ni * c * plane + v;
            let mut sum = T::zero();
            for ci in 0..c {
                let val = p.data()[base + ci * plane];
                if val < T::zero() {
                    return Err(NetworkError::NotADistribution {
                        index: v,
                        sum: val.as_f64(),
                    });
                }
                sum += val;
            }
            if (sum - T::one()).abs() > tol {
                return Err(NetworkError::NotADistribution { index: v, sum: sum.as_f64() });
            }
        }
    }
    let floor = T::from_f64(1e-12);
    let mut loss = T::zero();
    let mut grad = Tensor5::zeros(p.shape());
    for ni in 0..n {
        let wt = w[ni].values();
        for v in 0..plane {
            let weight = T::from_f64(wt[v] as f64);
            let base = ni * c * plane + v;
            for ci in 0..c {
                let idx = base + ci * plane;
                let (pv, yv) = (p.data()[idx], y.data()[idx]);
                if weight != T::zero() && yv != T::zero() {
                    loss -= weight * yv * pv.max(floor).ln();
                }
                grad.data_mut()[idx] = weight * (pv - yv);
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelGridSpec;
    use crate::occupancy::{balance_weights, OccupancyGrid, OccupancyState};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weights_all_one(spec: VoxelGridSpec) -> WeightTensor {
        let grid = OccupancyGrid::from_values(
            spec,
            vec![OccupancyState::OccupiedIn; spec.voxel_count()],
        );
        balance_weights(&grid, 0)
    }

    fn weights_single(spec: VoxelGridSpec, keep: usize) -> WeightTensor {
        let mut states = vec![OccupancyState::Other; spec.voxel_count()];
        states[keep] = OccupancyState::OccupiedIn;
        balance_weights(&OccupancyGrid::from_values(spec, states), 0)
    }

    #[test]
    fn softmax_uniform_logits() {
        let x = Tensor5::<f64>::zeros([1, 12, 2, 2, 2]);
        let p = softmax_channels(&x);
        assert!(p.data().iter().all(|v| (v - 1.0 / 12.0).abs() < 1e-12));
    }

    #[test]
    fn softmax_dominant_logit() {
        let mut x = Tensor5::<f64>::zeros([1, 4, 1, 1, 1]);
        x.set(0, 2, 0, 0, 0, 1e3);
        let p = softmax_channels(&x);
        assert!(p.get(0, 2, 0, 0, 0) > 1.0 - 1e-12);
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..2 * 12 * 27).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = Tensor5::<f64>::from_vec([2, 12, 3, 3, 3], data).unwrap();
        let p = softmax_channels(&x);
        let plane = 27;
        for ni in 0..2 {
            for v in 0..plane {
                let sum: f64 = (0..12).map(|c| p.data()[(ni * 12 + c) * plane + v]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!((0..12).all(|c| p.data()[(ni * 12 + c) * plane + v] >= 0.0));
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [2, 2, 2]).unwrap();
        let mut y = Tensor5::<f64>::zeros([1, 3, 2, 2, 2]);
        for v in 0..8 {
            y.data_mut()[v] = 1.0; // class 0 everywhere
        }
        let (loss, grad) = weighted_cce(&y, &y, &[weights_all_one(spec)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn uniform_probabilities_single_weight_is_ln_12() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [2, 2, 2]).unwrap();
        let p = softmax_channels(&Tensor5::<f64>::zeros([1, 12, 2, 2, 2]));
        let mut y = Tensor5::<f64>::zeros([1, 12, 2, 2, 2]);
        let plane = 8;
        for v in 0..plane {
            y.data_mut()[3 * plane + v] = 1.0;
        }
        let (loss, _) = weighted_cce(&p, &y, &[weights_single(spec, 5)]).unwrap();
        assert!((loss - 12.0f64.ln()).abs() < 1e-12, "loss {loss}");
        assert!((loss - 2.4849).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_distribution() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [1, 1, 1]).unwrap();
        let p = Tensor5::<f64>::from_vec([1, 2, 1, 1, 1], vec![0.9, 0.3]).unwrap();
        let y = Tensor5::<f64>::from_vec([1, 2, 1, 1, 1], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            weighted_cce(&p, &y, &[weights_all_one(spec)]),
            Err(NetworkError::NotADistribution { .. })
        ));
        let neg = Tensor5::<f64>::from_vec([1, 2, 1, 1, 1], vec![1.1, -0.1]).unwrap();
        assert!(weighted_cce(&neg, &y, &[weights_all_one(spec)]).is_err());
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_when_exact() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [1, 1, 1]).unwrap();
        let p = Tensor5::<f64>::from_vec([1, 2, 1, 1, 1], vec![0.7, 0.3]).unwrap();
        let y = Tensor5::<f64>::from_vec([1, 2, 1, 1, 1], vec![1.0, 0.0]).unwrap();
        let (loss, _) = weighted_cce(&p, &y, &[weights_all_one(spec)]).unwrap();
        assert!(loss > 0.0);
        assert!((loss - (-(0.7f64.ln()))).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_through_softmax() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [3, 3, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..12 * 27).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let logits = Tensor5::from_vec([1, 12, 3, 3, 3], data).unwrap();
        let mut y = Tensor5::<f64>::zeros([1, 12, 3, 3, 3]);
        let plane = 27;
        for v in 0..plane {
            let c = rng.gen_range(0..12);
            y.data_mut()[c * plane + v] = 1.0;
        }
        let grid = OccupancyGrid::from_values(
            spec,
            (0..27)
                .map(|i| {
                    if i % 3 == 0 {
                        OccupancyState::OccupiedIn
                    } else {
                        OccupancyState::Other
                    }
                })
                .collect(),
        );
        let w = [balance_weights(&grid, 0)];
        let f = |l: &Tensor5<f64>| {
            let p = softmax_channels(l);
            weighted_cce(&p, &y, &w).unwrap().0
        };
        let (_, analytic) = weighted_cce(&softmax_channels(&logits), &y, &w).unwrap();
        let eps = 1e-5;
        for i in (0..logits.len()).step_by(5) {
            let mut lp = logits.clone();
            lp.data_mut()[i] += eps;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= eps;
            let fd = (f(&lp) - f(&lm)) / (2.0 * eps);
            let a = analytic.data()[i];
            let denom = a.abs().max(fd.abs());
            if denom < 1e-8 {
                assert!((a - fd).abs() < 1e-8);
            } else {
                assert!((a - fd).abs() / denom < 1e-6, "{a} vs {fd}");
            }
        }
    }

    #[test]
    fn one_hot_skips_ignore() {
        let spec = VoxelGridSpec::new([0.0; 3], 0.1, [2, 1, 1]).unwrap();
        let lab = LabelVolume::new(spec, vec![3, IGNORE]).unwrap();
        let y: Tensor5<f32> = labels_to_one_hot(&[lab], 12);
        assert_eq!(y.shape(), [1, 12, 1, 1, 2]);
        assert_eq!(y.get(0, 3, 0, 0, 0), 1.0);
        let col1: f32 = (0..12).map(|c| y.get(0, c, 0, 0, 1)).sum();
        assert_eq!(col1, 0.0);
    }
}
