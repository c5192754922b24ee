//! SGD with momentum and weight decay, plus the one-cycle learning-rate
//! schedule.

use super::tensor::Scalar;
use super::NetworkError;

/// Classic momentum update: `v <- mu v - lr (g + decay theta)`, then
/// `theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub momentum: T,
    pub weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0005;

    /// Velocity buffers are created to mirror the given parameter lengths.
    pub fn new(momentum: f64, weight_decay: f64, param_lens: &[usize]) -> Self {
        Self {
            momentum: T::from_f64(momentum),
            weight_decay: T::from_f64(weight_decay),
            velocity: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn defaults(param_lens: &[usize]) -> Self {
        Self::new(Self::DEFAULT_MOMENTUM, Self::DEFAULT_WEIGHT_DECAY, param_lens)
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    pub fn step(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        lr: f64,
    ) -> Result<(), NetworkError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NetworkError::BadLearningRate(lr));
        }
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(NetworkError::ShapeMismatch {
                got: vec![params.len(), grads.len()],
                expected: vec![self.velocity.len()],
            });
        }
        let lr = T::from_f64(lr);
        for ((theta, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if theta.len() != v.len() || g.len() != v.len() {
                return Err(NetworkError::ShapeMismatch {
                    got: vec![theta.len(), g.len()],
                    expected: vec![v.len()],
                });
            }
            for ((t, &gi), vi) in theta.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi - lr * (gi + self.weight_decay * *t);
                *t += *vi;
            }
        }
        Ok(())
    }
}

/// Piecewise-linear one-cycle schedule over a 30-epoch template:
/// 0.01 -> 0.1 over [0, 10], back to 0.01 over [10, 20], down to 0.0005
/// over [20, 30], constant afterwards.
pub fn one_cycle_lr(epoch: f64) -> Result<f64, NetworkError> {
    if epoch < 0.0 || !epoch.is_finite() {
        return Err(NetworkError::NegativeEpoch(epoch));
    }
    Ok(if epoch < 10.0 {
        0.01 + (0.1 - 0.01) * (epoch / 10.0)
    } else if epoch < 20.0 {
        0.1 - (0.1 - 0.01) * ((epoch - 10.0) / 10.0)
    } else if epoch < 30.0 {
        0.01 - (0.01 - 0.0005) * ((epoch - 20.0) / 10.0)
    } else {
        0.0005
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_decay_leaves_params_alone() {
        let mut opt = SgdMomentum::<f64>::new(0.9, 0.0, &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        let g = vec![0.0; 3];
        opt.step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_matches_formula() {
        let mut opt = SgdMomentum::<f64>::defaults(&[2]);
        let mut p = vec![1.0, -0.5];
        let g = vec![0.2, 0.4];
        let lr = 0.1;
        opt.step(&mut [&mut p], &[&g], lr).unwrap();
        for (before, (after, gi)) in [1.0, -0.5].iter().zip(p.iter().zip(g.iter())) {
            let expect = before - lr * (gi + 0.0005 * before);
            assert!((after - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut opt = SgdMomentum::<f64>::new(0.9, 0.0, &[1]);
        let mut p = vec![0.0];
        let g = vec![1.0];
        opt.step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        opt.step(&mut [&mut p], &[&g], 0.1).unwrap();
        // v2 = 0.9 * (-0.1) - 0.1 = -0.19
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = 0.5 * sum x^2, optimum at zero; gradient is x itself.
        let mut opt = SgdMomentum::<f64>::new(0.9, 0.0, &[4]);
        let mut x = vec![2.0, -3.0, 0.5, 1.5];
        for _ in 0..500 {
            let g = x.clone();
            opt.step(&mut [&mut x], &[&g], 0.05).unwrap();
        }
        let f: f64 = x.iter().map(|v| 0.5 * v * v).sum();
        assert!(f < 1e-8, "f {f}");
    }

    #[test]
    fn rejects_bad_lr_and_shape() {
        let mut opt = SgdMomentum::<f64>::defaults(&[2]);
        let mut p = vec![0.0, 0.0];
        let g = vec![0.0, 0.0];
        assert!(opt.step(&mut [&mut p], &[&g], 0.0).is_err());
        assert!(opt.step(&mut [&mut p], &[&g], f64::NAN).is_err());
        let short = vec![0.0];
        assert!(opt.step(&mut [&mut p], &[&short], 0.1).is_err());
    }

    #[test]
    fn schedule_endpoints_and_interpolation() {
        assert_eq!(one_cycle_lr(0.0).unwrap(), 0.01);
        assert_eq!(one_cycle_lr(10.0).unwrap(), 0.1);
        assert_eq!(one_cycle_lr(20.0).unwrap(), 0.01);
        assert_eq!(one_cycle_lr(30.0).unwrap(), 0.0005);
        assert!((one_cycle_lr(5.0).unwrap() - 0.055).abs() < 1e-12);
        assert!((one_cycle_lr(25.0).unwrap() - 0.00525).abs() < 1e-12);
        assert_eq!(one_cycle_lr(31.0).unwrap(), 0.0005);
        assert_eq!(one_cycle_lr(1000.0).unwrap(), 0.0005);
        assert!(one_cycle_lr(-0.1).is_err());
    }
}
