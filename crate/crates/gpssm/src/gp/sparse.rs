//! Sparse variational GP: a free Gaussian over function values at M inducing
//! inputs, queried through the standard conditional formulas. All solves go
//! through Cholesky factors; explicit inverses never appear.

use crate::autodiff::Scalar;
use crate::error::Result;
use crate::gp::conditioning::clamp_variance;
use crate::gp::kernel::{kernel_gram_psd, Kernel, MeanFunction};
use crate::linalg::{gaussian_kl, GaussianDist, Mat, PsdMatrix};

/// One scalar-output sparse GP (one latent dimension's transition function).
#[derive(Debug, Clone)]
pub struct SparseGp<S> {
    pub kernel: Kernel<S>,
    pub mean_fn: MeanFunction<S>,
    /// Inducing inputs, M x input_dim.
    pub z: Mat<S>,
    /// Variational mean of the inducing outputs.
    pub mu_u: Vec<S>,
    /// Variational covariance of the inducing outputs (stored as its factor).
    pub sigma_u: PsdMatrix<S>,
}

/// Solves shared by every query against one sparse GP.
pub struct SparseGpCache<S> {
    pub chol_kzz: PsdMatrix<S>,
    pub m_z: Vec<S>,
    /// `mu_u - m_z`.
    pub mu_minus_mz: Vec<S>,
    /// `Kzz^{-1} (mu_u - m_z)`; posterior mean at x is `m(x) + k_zx . alpha`.
    pub alpha: Vec<S>,
    z: Mat<S>,
}

impl<S: Scalar> SparseGpCache<S> {
    pub fn z_row(&self, i: usize) -> &[S] {
        self.z.row(i)
    }
}

/// Conditional of one sparse GP at a single input.
pub struct SparseConditional<S> {
    /// `m(x)`, the prior mean at the query.
    pub prior_mean: S,
    /// Posterior mean `m(x) + k_zx' Kzz^{-1} (mu_u - m_z)`.
    pub posterior_mean: S,
    /// Conditional variance given the inducing outputs, `k(x,x) - |Lzz^{-1} k_zx|^2`.
    pub cond_var: S,
    /// Marginal posterior variance, `cond_var + w' Sigma_u w`.
    pub marg_var: S,
    /// `Kzz^{-1} k_zx`; the mean given concrete inducing values u is
    /// `m(x) + mean_weights . (u - m_z)`.
    pub mean_weights: Vec<S>,
    pub k_zx: Vec<S>,
}

impl<S: Scalar> SparseGp<S> {
    pub fn n_inducing(&self) -> usize {
        self.z.rows()
    }

    pub fn cache(&self) -> Result<SparseGpCache<S>> {
        let kzz = kernel_gram_psd(&self.kernel, &self.z)?;
        let m = self.z.rows();
        let mut m_z = Vec::with_capacity(m);
        for i in 0..m {
            m_z.push(self.mean_fn.eval(self.z.row(i)));
        }
        let mut mu_minus_mz = Vec::with_capacity(m);
        for i in 0..m {
            mu_minus_mz.push(self.mu_u[i] - m_z[i]);
        }
        let tmp = kzz.solve_lower(&mu_minus_mz)?;
        let alpha = kzz.solve_lower_t(&tmp)?;
        Ok(SparseGpCache { chol_kzz: kzz, m_z, mu_minus_mz, alpha, z: self.z.clone() })
    }

    /// Full conditional at `x`: weights, conditional and marginal variances.
    pub fn conditional(&self, cache: &SparseGpCache<S>, x: &[S]) -> Result<SparseConditional<S>> {
        let m = self.n_inducing();
        let mut k_zx = Vec::with_capacity(m);
        for i in 0..m {
            k_zx.push(self.kernel.eval(self.z.row(i), x));
        }
        let l_inv_k = cache.chol_kzz.solve_lower(&k_zx)?;
        let w = cache.chol_kzz.solve_lower_t(&l_inv_k)?;

        let prior_mean = self.mean_fn.eval(x);
        let mut posterior_mean = prior_mean;
        for i in 0..m {
            posterior_mean = posterior_mean + k_zx[i] * cache.alpha[i];
        }

        let mut cond_var = self.kernel.eval_diag(x);
        for v in &l_inv_k {
            cond_var = cond_var - *v * *v;
        }
        let cond_var = clamp_variance(cond_var)?;

        // w' Sigma_u w through the factor: |Lu' w|^2
        let lu = self.sigma_u.lower();
        let mut quad = cond_var.lift(0.0);
        for i in 0..m {
            let mut acc = lu.at(i, i) * w[i];
            for j in i + 1..m {
                acc = acc + lu.at(j, i) * w[j];
            }
            quad = quad + acc * acc;
        }
        let marg_var = cond_var + quad;

        Ok(SparseConditional { prior_mean, posterior_mean, cond_var, marg_var, mean_weights: w, k_zx })
    }

    /// Mean and conditional variance given a concrete inducing draw, using a
    /// precomputed `alpha_u = Kzz^{-1} (u - m_z)`. O(M) beyond the kernel row
    /// and one triangular solve.
    pub fn conditional_given_u(
        &self,
        cache: &SparseGpCache<S>,
        alpha_u: &[S],
        x: &[S],
    ) -> Result<(S, S)> {
        let m = self.n_inducing();
        let mut k_zx = Vec::with_capacity(m);
        for i in 0..m {
            k_zx.push(self.kernel.eval(self.z.row(i), x));
        }
        let l_inv_k = cache.chol_kzz.solve_lower(&k_zx)?;
        let mut mean = self.mean_fn.eval(x);
        for i in 0..m {
            mean = mean + k_zx[i] * alpha_u[i];
        }
        let mut cond_var = self.kernel.eval_diag(x);
        for v in &l_inv_k {
            cond_var = cond_var - *v * *v;
        }
        Ok((mean, clamp_variance(cond_var)?))
    }
}

/// KL divergence from the variational inducing distribution to the GP prior
/// over the same inducing outputs.
pub fn kl_qu_pu<S: Scalar>(gp: &SparseGp<S>, cache: &SparseGpCache<S>) -> Result<S> {
    let q = GaussianDist { mean: gp.mu_u.clone(), cov: gp.sigma_u.clone() };
    let p = GaussianDist { mean: cache.m_z.clone(), cov: cache.chol_kzz.clone() };
    gaussian_kl(&q, &p)
}
