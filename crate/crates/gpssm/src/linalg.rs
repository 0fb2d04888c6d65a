//! Dense linear algebra over a generic scalar.
//!
//! Everything is built around Cholesky factors: covariances are only ever
//! held as [`PsdMatrix`] (lower factor plus the jitter that was needed), and
//! solves go through forward/back substitution, never an explicit inverse.
//! The routines are generic over [`Scalar`] so the same code serves plain
//! evaluation and gradient recording.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Jitter escalation schedule for factorisation attempts, in order.
pub const JITTER_SCHEDULE: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

/// Absolute symmetry tolerance demanded of factorisation inputs.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// n-by-n matrix filled via `f`, using `witness` to lift constants.
    pub fn from_fn(rows: usize, cols: usize, witness: S, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(witness.lift(f(i, j)));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn values(&self) -> Mat<f64> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|s| s.val()).collect() }
    }

    pub fn transpose(&self) -> Mat<S> {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.at(i, j));
            }
        }
        Mat { rows: self.cols, cols: self.rows, data }
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.cols, x.len(), "matvec dims");
        assert!(self.cols > 0);
        (0..self.rows)
            .map(|i| {
                let mut acc = self.at(i, 0) * x[0];
                for j in 1..self.cols {
                    acc = acc + self.at(i, j) * x[j];
                }
                acc
            })
            .collect()
    }

    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.cols, other.rows, "matmul dims");
        assert!(self.cols > 0);
        let mut data = Vec::with_capacity(self.rows * other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = self.at(i, 0) * other.at(0, j);
                for k in 1..self.cols {
                    acc = acc + self.at(i, k) * other.at(k, j);
                }
                data.push(acc);
            }
        }
        Mat { rows: self.rows, cols: other.cols, data }
    }

    /// `A diag(d) A^T` for per-coordinate variances `d`.
    pub fn sandwich_diag(&self, d: &[S]) -> Mat<S> {
        assert_eq!(self.cols, d.len(), "sandwich dims");
        let mut out = Vec::with_capacity(self.rows * self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                let mut acc = self.at(i, 0) * d[0] * self.at(j, 0);
                for k in 1..self.cols {
                    acc = acc + self.at(i, k) * d[k] * self.at(j, k);
                }
                out.push(acc);
            }
        }
        Mat { rows: self.rows, cols: self.rows, data: out }
    }

    pub fn add(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Mat { rows: self.rows, cols: self.cols, data }
    }

    pub fn max_abs_diff(&self, other: &Mat<S>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.val() - b.val()).abs())
            .fold(0.0, f64::max)
    }
}

impl Mat<f64> {
    pub fn zeros(rows: usize, cols: usize) -> Mat<f64> {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Mat<f64> {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }
}

/// A symmetric positive (semi-)definite matrix held by its lower Cholesky
/// factor. `jitter` is the diagonal inflation that was required to factorise;
/// the factor reproduces `input + jitter * I`.
#[derive(Debug, Clone)]
pub struct PsdMatrix<S> {
    lower: Mat<S>,
    jitter: f64,
}

impl<S: Scalar> PsdMatrix<S> {
    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Mat<S> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter
    }

    /// Build directly from a lower factor known to be valid.
    pub fn from_lower(lower: Mat<S>) -> Self {
        assert_eq!(lower.rows(), lower.cols());
        PsdMatrix { lower, jitter: 0.0 }
    }

    /// Forward substitution: solves `L y = rhs`.
    pub fn solve_lower(&self, rhs: &[S]) -> Result<Vec<S>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rhs.len(), context: "solve_lower" });
        }
        let mut y: Vec<S> = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = rhs[i];
            for j in 0..i {
                acc = acc - self.lower.at(i, j) * y[j];
            }
            y.push(acc / self.lower.at(i, i));
        }
        Ok(y)
    }

    /// Back substitution: solves `L^T x = rhs`.
    pub fn solve_lower_t(&self, rhs: &[S]) -> Result<Vec<S>> {
        let n = self.dim();
        if rhs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: rhs.len(), context: "solve_lower_t" });
        }
        let mut x = rhs.to_vec();
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc = acc - self.lower.at(j, i) * x[j];
            }
            x[i] = acc / self.lower.at(i, i);
        }
        Ok(x)
    }

    /// Squared Mahalanobis norm `v^T (L L^T)^{-1} v`.
    pub fn quad_inv(&self, v: &[S]) -> Result<S> {
        let y = self.solve_lower(v)?;
        let mut acc = y[0] * y[0];
        for s in &y[1..] {
            acc = acc + *s * *s;
        }
        Ok(acc)
    }

    /// `ln det(L L^T)`.
    pub fn logdet(&self) -> S {
        let mut acc = self.lower.at(0, 0).ln();
        for i in 1..self.dim() {
            acc = acc + self.lower.at(i, i).ln();
        }
        acc * 2.0
    }

    /// `L L^T`, for checks against the factored input.
    pub fn reconstruct(&self) -> Mat<S> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let kmax = i.min(j);
                let mut acc = self.lower.at(i, 0) * self.lower.at(j, 0);
                for k in 1..=kmax {
                    acc = acc + self.lower.at(i, k) * self.lower.at(j, k);
                }
                out.push(acc);
            }
        }
        Mat::from_vec(n, n, out)
    }

    /// `mean + L eps` for a standard-normal vector `eps`.
    pub fn affine_sample(&self, mean: &[S], eps: &[f64]) -> Vec<S> {
        let n = self.dim();
        assert_eq!(mean.len(), n);
        assert_eq!(eps.len(), n);
        (0..n)
            .map(|i| {
                let mut acc = mean[i] + self.lower.at(i, 0) * eps[0];
                for j in 1..=i {
                    acc = acc + self.lower.at(i, j) * eps[j];
                }
                acc
            })
            .collect()
    }
}

fn try_factor<S: Scalar>(a: &Mat<S>, jitter: f64) -> Option<Mat<S>> {
    let n = a.rows();
    let mut l = a.clone(); // reuse storage; only the lower triangle survives
    for j in 0..n {
        let mut pivot2 = a.at(j, j) + jitter;
        for k in 0..j {
            let ljk = l.at(j, k);
            pivot2 = pivot2 - ljk * ljk;
        }
        let pv = pivot2.val();
        if !(pv > 0.0) || !pv.is_finite() {
            return None;
        }
        let pivot = pivot2.sqrt();
        l.set(j, j, pivot);
        for i in j + 1..n {
            let mut acc = a.at(i, j);
            for k in 0..j {
                acc = acc - l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, acc / pivot);
        }
        for k in j + 1..n {
            l.set(j, k, pivot.lift(0.0));
        }
    }
    Some(l)
}

/// Cholesky factorisation with jitter escalation.
///
/// The input must be square and symmetric to within [`SYMMETRY_TOL`]
/// (absolute). Each jitter level in [`JITTER_SCHEDULE`] is tried in order;
/// the factor that succeeds reproduces `a + jitter * I`. Failure at every
/// level is [`Error::NotFactorizable`].
pub fn cholesky<S: Scalar>(a: &Mat<S>) -> Result<PsdMatrix<S>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.cols(), context: "cholesky" });
    }
    assert!(n > 0, "cholesky of empty matrix");
    for i in 0..n {
        for j in i + 1..n {
            let delta = (a.at(i, j).val() - a.at(j, i).val()).abs();
            if delta > SYMMETRY_TOL {
                return Err(Error::AsymmetricInput { row: i, col: j, delta });
            }
        }
    }
    // Probe on plain values first so the generic pass runs exactly once.
    let vals = a.values();
    let mut chosen = None;
    for &jitter in &JITTER_SCHEDULE {
        if try_factor(&vals, jitter).is_some() {
            chosen = Some(jitter);
            break;
        }
    }
    let jitter = chosen.ok_or(Error::NotFactorizable { dim: n, last_jitter: JITTER_SCHEDULE[4] })?;
    let lower = try_factor(a, jitter)
        .ok_or(Error::NotFactorizable { dim: n, last_jitter: jitter })?;
    Ok(PsdMatrix { lower, jitter })
}

/// Solves `(L L^T) x = rhs` by two triangular substitutions.
pub fn tri_solve<S: Scalar>(factor: &PsdMatrix<S>, rhs: &[S]) -> Result<Vec<S>> {
    let y = factor.solve_lower(rhs)?;
    factor.solve_lower_t(&y)
}

/// A Gaussian with dense covariance.
#[derive(Debug, Clone)]
pub struct GaussianDist<S> {
    pub mean: Vec<S>,
    pub cov: PsdMatrix<S>,
}

impl<S: Scalar> GaussianDist<S> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn values(&self) -> GaussianDist<f64> {
        GaussianDist {
            mean: self.mean.iter().map(|s| s.val()).collect(),
            cov: PsdMatrix { lower: self.cov.lower.values(), jitter: self.cov.jitter },
        }
    }

    /// `mean + L eps` for a pre-drawn standard normal vector.
    pub fn affine_sample(&self, eps: &[f64]) -> Vec<S> {
        self.cov.affine_sample(&self.mean, eps)
    }

    /// Diagonal of the covariance, via the factor rows.
    pub fn var_diag(&self) -> Vec<S> {
        let l = self.cov.lower();
        (0..self.dim())
            .map(|i| {
                let mut acc = l.at(i, 0) * l.at(i, 0);
                for k in 1..=i {
                    acc = acc + l.at(i, k) * l.at(i, k);
                }
                acc
            })
            .collect()
    }
}

/// Log density of `x` under `dist`.
pub fn gaussian_log_density<S: Scalar>(x: &[S], dist: &GaussianDist<S>) -> Result<S> {
    let n = dist.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len(), context: "gaussian_log_density" });
    }
    let diff: Vec<S> = x.iter().zip(&dist.mean).map(|(&a, &b)| a - b).collect();
    let quad = dist.cov.quad_inv(&diff)?;
    Ok((quad + dist.cov.logdet() + n as f64 * LN_2PI) * (-0.5))
}

/// `KL(q || p)` between Gaussians of the same dimension.
pub fn gaussian_kl<S: Scalar>(q: &GaussianDist<S>, p: &GaussianDist<S>) -> Result<S> {
    let n = q.dim();
    if p.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.dim(), context: "gaussian_kl" });
    }
    // tr(Sp^-1 Sq) = || Lp^-1 Lq ||_F^2, column by column of Lq.
    let mut trace = None;
    for j in 0..n {
        let col: Vec<S> = (0..n).map(|i| q.cov.lower().at(i, j)).collect();
        let w = p.cov.solve_lower(&col)?;
        for s in w {
            let sq = s * s;
            trace = Some(match trace {
                None => sq,
                Some(acc) => acc + sq,
            });
        }
    }
    let trace = trace.expect("dim > 0");
    let diff: Vec<S> = p.mean.iter().zip(&q.mean).map(|(&a, &b)| a - b).collect();
    let maha = p.cov.quad_inv(&diff)?;
    Ok((trace + maha - n as f64 + p.cov.logdet() - q.cov.logdet()) * 0.5)
}

// ---- scalar (1-D) shortcuts used throughout the samplers ----

/// Log density of a scalar normal with variance `var`.
pub fn normal_logpdf<S: Scalar>(x: S, mean: S, var: S) -> S {
    let d = x - mean;
    (d * d / var + var.ln() + LN_2PI) * (-0.5)
}

/// KL between scalar normals.
pub fn normal_kl<S: Scalar>(mq: S, vq: S, mp: S, vp: S) -> S {
    let d = mq - mp;
    (vq / vp + d * d / vp - 1.0 + vp.ln() - vq.ln()) * 0.5
}
