//! Sequential GP conditioning with an incrementally extended Cholesky factor.
//!
//! A [`ConditioningState`] holds observed (input, value) pairs for a scalar
//! GP and answers conditional mean/variance queries at new points in O(t^2).
//! Extending by one pair is also O(t^2): the existing factor rows are reused
//! and only the new row is computed. If roundoff drives the new pivot
//! non-positive, the whole Gram matrix is refactorised at the next jitter
//! level rather than silently clamping.
//!
//! Conditioning works against any covariance model, not just a prior kernel:
//! the chunked posterior conditions on draws under the *sparse posterior*
//! covariance, which this module supports through the [`CovModel`] trait.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::gp::kernel::{Kernel, MeanFunction};
use crate::gp::sparse::SparseGpCache;
use crate::linalg::{PsdMatrix, JITTER_SCHEDULE};

/// Squared distance below which two inputs count as the same point.
pub const DUPLICATE_TOL: f64 = 1e-8;

/// A Gaussian-process covariance/mean model over augmented inputs.
///
/// `Prep` carries whatever per-point precomputation makes repeated
/// covariance evaluations cheap (for the sparse posterior this is a pair of
/// inducing-space solves, turning each pairwise covariance into a dot
/// product).
pub trait CovModel<S: Scalar> {
    type Prep;

    fn prep(&self, x: &[S]) -> Result<Self::Prep>;
    fn mean(&self, p: &Self::Prep) -> S;
    /// `cov(p, p)`, usually cheaper than the pairwise form.
    fn var(&self, p: &Self::Prep) -> S;
    fn cov(&self, a: &Self::Prep, b: &Self::Prep) -> S;
    fn point(p: &Self::Prep) -> &[S];
}

/// GP prior covariance: kernel plus mean function.
pub struct PriorCov<'a, S> {
    pub kernel: &'a Kernel<S>,
    pub mean_fn: &'a MeanFunction<S>,
}

pub struct PriorPrep<S> {
    x: Vec<S>,
}

impl<'a, S: Scalar> CovModel<S> for PriorCov<'a, S> {
    type Prep = PriorPrep<S>;

    fn prep(&self, x: &[S]) -> Result<PriorPrep<S>> {
        Ok(PriorPrep { x: x.to_vec() })
    }

    fn mean(&self, p: &PriorPrep<S>) -> S {
        self.mean_fn.eval(&p.x)
    }

    fn var(&self, p: &PriorPrep<S>) -> S {
        self.kernel.eval_diag(&p.x)
    }

    fn cov(&self, a: &PriorPrep<S>, b: &PriorPrep<S>) -> S {
        self.kernel.eval(&a.x, &b.x)
    }

    fn point(p: &PriorPrep<S>) -> &[S] {
        &p.x
    }
}

/// Sparse posterior covariance with the inducing outputs marginalised out:
///
/// `cov(a, b) = k(a, b) - k_a' Kzz^{-1} k_b + k_a' Kzz^{-1} S_u Kzz^{-1} k_b`
///
/// where `S_u` is the variational covariance of the inducing outputs. The
/// mean is `m(x) + k_x' Kzz^{-1} (mu_u - m_z)`.
pub struct SparsePosteriorCov<'a, S> {
    pub kernel: &'a Kernel<S>,
    pub mean_fn: &'a MeanFunction<S>,
    pub cache: &'a SparseGpCache<S>,
    pub sigma_u: &'a PsdMatrix<S>,
}

pub struct SparsePrep<S> {
    x: Vec<S>,
    /// `Lzz^{-1} k_zx`, so the Nystrom term is a dot product.
    l_inv_k: Vec<S>,
    /// `Lu' Kzz^{-1} k_zx`, so the variational term is a dot product.
    su: Vec<S>,
    mean: S,
    var: S,
}

impl<'a, S: Scalar> CovModel<S> for SparsePosteriorCov<'a, S> {
    type Prep = SparsePrep<S>;

    fn prep(&self, x: &[S]) -> Result<SparsePrep<S>> {
        let m = self.cache.chol_kzz.dim();
        let mut k_zx = Vec::with_capacity(m);
        for i in 0..m {
            k_zx.push(self.kernel.eval(self.cache.z_row(i), x));
        }
        let l_inv_k = self.cache.chol_kzz.solve_lower(&k_zx)?;
        let w = self.cache.chol_kzz.solve_lower_t(&l_inv_k)?;
        // su = Lu' w  (transpose-matvec against the stored factor)
        let lu = self.sigma_u.lower();
        let mut su = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = lu.at(i, i) * w[i];
            for j in i + 1..m {
                acc = acc + lu.at(j, i) * w[j];
            }
            su.push(acc);
        }
        let mut mean = self.mean_fn.eval(x);
        for i in 0..m {
            mean = mean + w[i] * self.cache.mu_minus_mz[i];
        }
        let mut var = self.kernel.eval_diag(x);
        for i in 0..m {
            var = var - l_inv_k[i] * l_inv_k[i] + su[i] * su[i];
        }
        let var = clamp_variance(var)?;
        Ok(SparsePrep { x: x.to_vec(), l_inv_k, su, mean, var })
    }

    fn mean(&self, p: &SparsePrep<S>) -> S {
        p.mean
    }

    fn var(&self, p: &SparsePrep<S>) -> S {
        p.var
    }

    fn cov(&self, a: &SparsePrep<S>, b: &SparsePrep<S>) -> S {
        let mut acc = self.kernel.eval(&a.x, &b.x);
        for i in 0..a.l_inv_k.len() {
            acc = acc - a.l_inv_k[i] * b.l_inv_k[i] + a.su[i] * b.su[i];
        }
        acc
    }

    fn point(p: &SparsePrep<S>) -> &[S] {
        &p.x
    }
}

/// Clamp a computed variance at zero, rejecting anything below -1e-10 as a
/// genuine numerical failure rather than roundoff.
pub fn clamp_variance<S: Scalar>(v: S) -> Result<S> {
    if v.val() < -1e-10 {
        return Err(Error::NegativeVariance { value: v.val() });
    }
    Ok(v.clamp_min(0.0))
}

/// Answer to a conditional query.
pub struct Conditional<S: Scalar, P> {
    pub mean: S,
    pub var: S,
    /// Prep for the queried point, reusable for a subsequent extend.
    pub prep: P,
    /// Set when the query hit a stored input (within [`DUPLICATE_TOL`]);
    /// the mean is then the stored value and the variance exactly zero.
    pub duplicate_of: Option<usize>,
}

pub struct ConditioningState<S: Scalar, C: CovModel<S>> {
    cov: C,
    preps: Vec<C::Prep>,
    values: Vec<S>,
    /// Lower-triangular factor rows of the running Gram matrix plus jitter.
    rows: Vec<Vec<S>>,
    /// `L^{-1} (values - means)`, maintained incrementally.
    white: Vec<S>,
    means: Vec<S>,
    jitter: f64,
}

impl<S: Scalar, C: CovModel<S>> ConditioningState<S, C> {
    pub fn new(cov: C) -> Self {
        ConditioningState {
            cov,
            preps: Vec::new(),
            values: Vec::new(),
            rows: Vec::new(),
            white: Vec::new(),
            means: Vec::new(),
            jitter: JITTER_SCHEDULE[1],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn find_duplicate(&self, x: &[S]) -> Option<usize> {
        'outer: for (i, p) in self.preps.iter().enumerate() {
            let stored = C::point(p);
            let mut dist2 = 0.0;
            for (a, b) in stored.iter().zip(x) {
                let d = a.val() - b.val();
                dist2 += d * d;
                if dist2 >= DUPLICATE_TOL * DUPLICATE_TOL {
                    continue 'outer;
                }
            }
            return Some(i);
        }
        None
    }

    /// L y = c by forward substitution against the stored factor rows.
    fn forward_sub(&self, c: &[S]) -> Vec<S> {
        let mut y: Vec<S> = Vec::with_capacity(c.len());
        for i in 0..c.len() {
            let mut acc = c[i];
            for j in 0..i {
                acc = acc - self.rows[i][j] * y[j];
            }
            y.push(acc / self.rows[i][i]);
        }
        y
    }

    /// Conditional distribution of the process at `x` given everything
    /// observed so far. A query within [`DUPLICATE_TOL`] of a stored input
    /// returns that stored value with zero variance.
    pub fn conditional(&self, x: &[S]) -> Result<Conditional<S, C::Prep>> {
        let prep = self.cov.prep(x)?;
        if let Some(i) = self.find_duplicate(x) {
            let mean = self.values[i];
            return Ok(Conditional { mean, var: mean.lift(0.0), prep, duplicate_of: Some(i) });
        }
        let c: Result<Vec<S>> = self.preps.iter().map(|p| Ok(self.cov.cov(&prep, p))).collect();
        let c = c?;
        let s = self.forward_sub(&c);
        let mut mean = self.cov.mean(&prep);
        for i in 0..s.len() {
            mean = mean + s[i] * self.white[i];
        }
        let mut var = self.cov.var(&prep);
        for si in &s {
            var = var - *si * *si;
        }
        let var = clamp_variance(var)?;
        Ok(Conditional { mean, var, prep, duplicate_of: None })
    }

    /// Record `(x, value)` as observed, extending the factor by one row.
    ///
    /// Reuses the prep from a prior [`conditional`](Self::conditional) call.
    /// On pivot failure the Gram matrix is refactorised from scratch at the
    /// next jitter level; when the schedule is exhausted this reports
    /// [`Error::NotFactorizable`].
    pub fn extend(&mut self, prep: C::Prep, value: S) -> Result<()> {
        let c: Result<Vec<S>> = self.preps.iter().map(|p| Ok(self.cov.cov(&prep, p))).collect();
        let c = c?;
        let l_row = self.forward_sub(&c);
        let mut pivot2 = self.cov.var(&prep) + self.jitter;
        for li in &l_row {
            pivot2 = pivot2 - *li * *li;
        }
        let mean = self.cov.mean(&prep);
        if pivot2.val() > 0.0 && pivot2.val().is_finite() {
            let pivot = pivot2.sqrt();
            let mut resid = value - mean;
            for i in 0..l_row.len() {
                resid = resid - l_row[i] * self.white[i];
            }
            let mut row = l_row;
            row.push(pivot);
            self.rows.push(row);
            self.white.push(resid / pivot);
            self.preps.push(prep);
            self.values.push(value);
            self.means.push(mean);
            return Ok(());
        }
        // pivot failure: refactorise everything at successively larger jitter
        self.preps.push(prep);
        self.values.push(value);
        self.means.push(mean);
        let start = JITTER_SCHEDULE.iter().position(|&j| j > self.jitter).unwrap_or(JITTER_SCHEDULE.len());
        for &jitter in &JITTER_SCHEDULE[start..] {
            if self.try_refactor(jitter) {
                self.jitter = jitter;
                return Ok(());
            }
        }
        Err(Error::NotFactorizable { dim: self.len(), last_jitter: *JITTER_SCHEDULE.last().unwrap() })
    }

    /// Rebuild factor rows and whitened residuals from scratch at `jitter`.
    fn try_refactor(&mut self, jitter: f64) -> bool {
        let n = self.len();
        let mut rows: Vec<Vec<S>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut row: Vec<S> = Vec::with_capacity(i + 1);
            for j in 0..i {
                let mut acc = self.cov.cov(&self.preps[i], &self.preps[j]);
                for k in 0..j {
                    acc = acc - row[k] * rows[j][k];
                }
                row.push(acc / rows[j][j]);
            }
            let mut pivot2 = self.cov.var(&self.preps[i]) + jitter;
            for v in &row {
                pivot2 = pivot2 - *v * *v;
            }
            if !(pivot2.val() > 0.0) || !pivot2.val().is_finite() {
                return false;
            }
            row.push(pivot2.sqrt());
            rows.push(row);
        }
        // whitened residuals: forward substitution over all stored values
        let mut white: Vec<S> = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = self.values[i] - self.means[i];
            for j in 0..i {
                acc = acc - rows[i][j] * white[j];
            }
            white.push(acc / rows[i][i]);
        }
        self.rows = rows;
        self.white = white;
        true
    }
}

/// Conditional of a GP prior at `query` given the pairs stored in `state`.
pub fn gp_prior_conditional<'a, S: Scalar>(
    state: &ConditioningState<S, PriorCov<'a, S>>,
    query: &[S],
) -> Result<(S, S)> {
    let c = state.conditional(query)?;
    Ok((c.mean, c.var))
}

/// Push one observed pair into a prior conditioning state.
pub fn extend_conditioning_state<'a, S: Scalar>(
    state: &mut ConditioningState<S, PriorCov<'a, S>>,
    input: &[S],
    value: S,
) -> Result<()> {
    let prep = PriorPrep { x: input.to_vec() };
    state.extend(prep, value)
}
