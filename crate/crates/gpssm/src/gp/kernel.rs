//! Covariance and mean functions for the transition GPs.
//!
//! Hyperparameters are stored in constrained (positive) form; the training
//! layer owns the softplus reparameterisation. Kernel inputs are augmented
//! states `(x_t, c_t)`, so the input dimension is latent dim plus control dim.

use crate::autodiff::Scalar;
use crate::error::Result;
use crate::linalg::{cholesky, Mat, PsdMatrix};

#[derive(Debug, Clone)]
pub enum Kernel<S> {
    SquaredExponentialArd { signal_variance: S, lengthscales: Vec<S> },
    Linear { weight_variances: Vec<S> },
}

impl<S: Scalar> Kernel<S> {
    pub fn input_dim(&self) -> usize {
        match self {
            Kernel::SquaredExponentialArd { lengthscales, .. } => lengthscales.len(),
            Kernel::Linear { weight_variances } => weight_variances.len(),
        }
    }

    pub fn eval(&self, a: &[S], b: &[S]) -> S {
        match self {
            Kernel::SquaredExponentialArd { signal_variance, lengthscales } => {
                assert_eq!(a.len(), lengthscales.len(), "kernel input dim");
                assert_eq!(b.len(), lengthscales.len(), "kernel input dim");
                let mut quad = {
                    let d = (a[0] - b[0]) / lengthscales[0];
                    d * d
                };
                for i in 1..a.len() {
                    let d = (a[i] - b[i]) / lengthscales[i];
                    quad = quad + d * d;
                }
                *signal_variance * (quad * (-0.5)).exp()
            }
            Kernel::Linear { weight_variances } => {
                assert_eq!(a.len(), weight_variances.len(), "kernel input dim");
                let mut acc = weight_variances[0] * a[0] * b[0];
                for i in 1..a.len() {
                    acc = acc + weight_variances[i] * a[i] * b[i];
                }
                acc
            }
        }
    }

    /// `k(a, a)` without the round trip through `exp`.
    pub fn eval_diag(&self, a: &[S]) -> S {
        match self {
            Kernel::SquaredExponentialArd { signal_variance, .. } => *signal_variance,
            Kernel::Linear { .. } => self.eval(a, a),
        }
    }
}

/// Gram matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix<S: Scalar>(kernel: &Kernel<S>, a: &Mat<S>, b: &Mat<S>) -> Mat<S> {
    let mut data = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            data.push(kernel.eval(a.row(i), b.row(j)));
        }
    }
    Mat::from_vec(a.rows(), b.rows(), data)
}

/// Factorised Gram matrix of `kernel` over the rows of `pts`, with the usual
/// jitter escalation.
pub fn kernel_gram_psd<S: Scalar>(kernel: &Kernel<S>, pts: &Mat<S>) -> Result<PsdMatrix<S>> {
    let gram = kernel_matrix(kernel, pts, pts);
    cholesky(&gram)
}

/// The synthetic benchmark transition: a gentle slope that folds over into a
/// steep descent around the origin.
pub fn kink_response<S: Scalar>(x: S) -> S {
    let sig = ((x * (-2.0)).exp() + 1.0).recip();
    (x + 0.2) * (sig * (-5.0) + 1.0) + 0.8
}

/// Scalar-output mean function on augmented inputs. One per latent dimension.
#[derive(Debug, Clone)]
pub enum MeanFunction<S> {
    Zero,
    /// Passes the given input coordinate through: `m(x, c) = x[i]`.
    Identity { output_index: usize },
    AffineProjection { weights: Vec<S>, offset: S },
    /// The synthetic benchmark dynamics on input coordinate 0.
    Kink,
}

impl<S: Scalar> MeanFunction<S> {
    pub fn eval(&self, x: &[S]) -> S {
        match self {
            MeanFunction::Zero => x[0].lift(0.0),
            MeanFunction::Identity { output_index } => x[*output_index],
            MeanFunction::AffineProjection { weights, offset } => {
                assert_eq!(weights.len(), x.len(), "mean projection dim");
                let mut acc = *offset + weights[0] * x[0];
                for i in 1..x.len() {
                    acc = acc + weights[i] * x[i];
                }
                acc
            }
            MeanFunction::Kink => kink_response(x[0]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cholesky, Mat};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn se_ard_unit_distance_value() {
        let k = Kernel::SquaredExponentialArd { signal_variance: 1.0, lengthscales: vec![1.0] };
        assert_abs_diff_eq!(k.eval(&[0.0], &[1.0]), (-0.5f64).exp(), epsilon = 1e-15);
        assert_eq!(k.eval(&[0.3], &[0.3]), 1.0);
        assert_eq!(k.eval_diag(&[0.3]), 1.0);
    }

    #[test]
    fn se_ard_lengthscales_act_per_dimension() {
        let k = Kernel::SquaredExponentialArd {
            signal_variance: 2.0,
            lengthscales: vec![1.0, 10.0],
        };
        // the second coordinate is nearly inert at lengthscale 10
        let near = k.eval(&[0.0, 0.0], &[0.0, 1.0]);
        let far = k.eval(&[0.0, 0.0], &[1.0, 0.0]);
        assert!(near > far);
        assert_abs_diff_eq!(near, 2.0 * (-0.005f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn linear_kernel_is_weighted_dot_product() {
        let k = Kernel::Linear { weight_variances: vec![1.0] };
        assert_abs_diff_eq!(k.eval(&[2.0], &[3.0]), 6.0, epsilon = 1e-15);
        let k2 = Kernel::Linear { weight_variances: vec![0.5, 2.0] };
        assert_abs_diff_eq!(k2.eval(&[1.0, 2.0], &[3.0, 4.0]), 0.5 * 3.0 + 2.0 * 8.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_matrices_are_psd_up_to_tolerance() {
        // cholesky(K + 1e-10 I) succeeding certifies min eigenvalue >= -1e-10
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [5usize, 60, 200] {
            let pts = Mat::from_fn(n, 2, 0.0f64, |_, _| rng.gen_range(-3.0..3.0));
            for k in [
                Kernel::SquaredExponentialArd { signal_variance: 1.3, lengthscales: vec![0.7, 2.0] },
                Kernel::Linear { weight_variances: vec![0.9, 0.4] },
            ] {
                let mut gram = kernel_matrix(&k, &pts, &pts);
                for i in 0..n {
                    let v = gram.at(i, i);
                    gram.set(i, i, v + 1e-10);
                }
                let f = cholesky(&gram).expect("gram + 1e-10 I factorises");
                // the schedule may add its own small jitter for n=200; that is
                // still within the advertised eigenvalue slack
                assert!(f.jitter_used() <= 1e-8, "n={n} jitter {}", f.jitter_used());
            }
        }
    }

    #[test]
    fn mean_functions_evaluate() {
        let z: MeanFunction<f64> = MeanFunction::Zero;
        assert_eq!(z.eval(&[4.0, 1.0]), 0.0);
        let id = MeanFunction::Identity { output_index: 1 };
        assert_eq!(id.eval(&[4.0, 1.5]), 1.5);
        let aff = MeanFunction::AffineProjection { weights: vec![2.0, -1.0], offset: 0.5 };
        assert_abs_diff_eq!(aff.eval(&[1.0, 3.0]), 2.0 - 3.0 + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kink_response_frozen_values() {
        assert_abs_diff_eq!(kink_response(0.0), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(kink_response(-0.2), 0.8, epsilon = 1e-12);
        // slope approaches -4 far to the right: f(x) ~ 0.8 - 4(x + 0.2)
        let slope = kink_response(10.0) - kink_response(9.0);
        assert!((slope + 4.0).abs() < 0.01, "slope {slope}");
    }
}
