//! Variational posteriors over latent trajectories.
//!
//! Every variant factors as `q(x_1) prod_t q(x_{t+1} | ...)` where each step
//! is Gaussian with mean `A_t f + b_t` for some choice of `f`:
//!
//! * `FactorisedLinear`: `f = x_t`, step covariance `S_t` (diagonal).
//! * `FactorisedNonLinear`: `f = E[f(x_t)]` under the sparse posterior, step
//!   covariance `S_t + A_t C_f A_t'`.
//! * `NonFactorisedChunked`: `f = f(x_t)` sampled jointly within chunks of a
//!   fixed length under the sparse posterior (inducing outputs marginalised);
//!   each chunk starts from a free Gaussian.
//! * `Vcdt`: the inducing outputs are drawn once per trajectory and
//!   `f = E[f(x_t) | u]`, step covariance `S_t + A_t C_{f|u} A_t'`.
//! * `Prssm`: like `Vcdt` with `A = I`, `b = 0`, `S = Q` fixed, and the
//!   transition KL dropped from the objective (it reproduces an earlier
//!   scheme whose objective ignores that correction). With
//!   `biased_independent_f` the function value is drawn independently at
//!   every step from its marginal instead of conditionally on `u`.
//!
//! The per-step transition KL contributions are analytic; they are what the
//! training objective uses.

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::gp::conditioning::{ConditioningState, SparsePosteriorCov};
use crate::gp::SparseGpCache;
use crate::linalg::{cholesky, gaussian_log_density, GaussianDist, Mat, PsdMatrix, LN_2PI};
use crate::model::{augment, draw_or_mean, GpssmModel, TrajectorySample};
use crate::rng::{normal_vec, TrajectoryStreams};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorVariant {
    FactorisedLinear,
    FactorisedNonLinear,
    NonFactorisedChunked { chunk_length: usize },
    Vcdt,
    Prssm { biased_independent_f: bool },
}

impl PosteriorVariant {
    pub fn has_step_params(&self) -> bool {
        !matches!(self, PosteriorVariant::Prssm { .. })
    }
}

/// Variational parameters of a trajectory posterior.
#[derive(Debug, Clone)]
pub struct PosteriorSpec<S> {
    pub variant: PosteriorVariant,
    pub t_len: usize,
    pub q_x1: GaussianDist<S>,
    /// Step matrices; length 1 when tied, else T-1. Empty for `Prssm`.
    pub a: Vec<Mat<S>>,
    /// Step offsets, length T-1 (never tied; they track the data). Empty for `Prssm`.
    pub b: Vec<Vec<S>>,
    /// Diagonal step covariances; length 1 when tied, else T-1. Empty for `Prssm`.
    pub s: Vec<Vec<S>>,
    /// Free Gaussians at each chunk start after the first (chunked only).
    pub chunk_dists: Vec<GaussianDist<S>>,
    pub tie_across_time: bool,
}

impl<S: Scalar> PosteriorSpec<S> {
    pub fn a_at(&self, t: usize) -> &Mat<S> {
        if self.tie_across_time { &self.a[0] } else { &self.a[t] }
    }

    pub fn s_at(&self, t: usize) -> &[S] {
        if self.tie_across_time { &self.s[0] } else { &self.s[t] }
    }

    pub fn b_at(&self, t: usize) -> &[S] {
        &self.b[t]
    }
}

/// Chunk blocks `(start, end)` inclusive covering `0..t_len`.
pub fn chunk_blocks(t_len: usize, chunk_length: usize) -> Vec<(usize, usize)> {
    assert!(chunk_length >= 1, "chunk length must be at least 1");
    let mut blocks = Vec::new();
    let mut s = 0;
    while s < t_len {
        let e = (s + chunk_length - 1).min(t_len - 1);
        blocks.push((s, e));
        s = e + 1;
    }
    blocks
}

fn diag_mat<S: Scalar>(d: &[S]) -> Mat<S> {
    let zero = d[0].lift(0.0);
    let n = d.len();
    let mut m = Mat::from_vec(n, n, vec![zero; n * n]);
    for i in 0..n {
        m.set(i, i, d[i]);
    }
    m
}

/// KL of a diagonal-covariance step `N(mean_q, diag(s))` from the reference
/// transition `N(ref_mean, Q)`, plus the half-trace carried by the extra
/// marginal function variance `c` (zero for conditioned-on function draws):
///
/// `1/2 [ sum (s_d + c_d)/q_d + sum (mq_d - ref_d)^2/q_d - D + sum ln q_d - sum ln s_d ]`
fn factorised_diag_kl<S: Scalar>(
    s_diag: &[S],
    c_diag: Option<&[S]>,
    mean_q: &[S],
    ref_mean: &[S],
    q: &[S],
) -> S {
    let d = q.len();
    let mut acc = mean_q[0].lift(0.0);
    for i in 0..d {
        let mut num = s_diag[i];
        if let Some(c) = c_diag {
            num = num + c[i];
        }
        let diff = mean_q[i] - ref_mean[i];
        acc = acc + num / q[i] + diff * diff / q[i] + q[i].ln() - s_diag[i].ln();
    }
    (acc - d as f64) * 0.5
}

/// KL of a dense step `N(mean_q, S*)` from `N(ref_mean, Q)` plus the
/// half-trace of the conditional function variance `c`:
///
/// `1/2 [ tr(Q^{-1} S*) + sum c_d/q_d + |mean_q - ref|^2_{Q^{-1}} - D + ln|Q| - ln|S*| ]`
fn corrected_dense_kl<S: Scalar>(
    s_star_diag: &[S],
    s_star_chol: &PsdMatrix<S>,
    c_diag: &[S],
    mean_q: &[S],
    ref_mean: &[S],
    q: &[S],
) -> S {
    let d = q.len();
    let mut acc = mean_q[0].lift(0.0);
    for i in 0..d {
        let diff = mean_q[i] - ref_mean[i];
        acc = acc + (s_star_diag[i] + c_diag[i]) / q[i] + diff * diff / q[i] + q[i].ln();
    }
    (acc - s_star_chol.logdet() - d as f64) * 0.5
}

/// KL of a free chunk-start distribution from the reference transition
/// `N(f, Q)` given the sampled function value at the previous state.
fn boundary_kl<S: Scalar>(next_dist: &GaussianDist<S>, f: &[S], q: &[S]) -> S {
    let d = q.len();
    let var = next_dist.var_diag();
    let mut acc = f[0].lift(0.0);
    for i in 0..d {
        let diff = next_dist.mean[i] - f[i];
        acc = acc + var[i] / q[i] + diff * diff / q[i] + q[i].ln();
    }
    (acc - next_dist.cov.logdet() - d as f64) * 0.5
}

/// Everything one Monte Carlo sample contributes to the objective.
pub struct SampleEval<S: Scalar> {
    /// T rows of latent states.
    pub states: Vec<Vec<S>>,
    /// T-1 rows: the function value (sampled or mean) used at each step.
    pub f_values: Vec<Vec<S>>,
    /// Per-dimension inducing draws when the variant samples them.
    pub u_draws: Option<Vec<Vec<S>>>,
    /// Log density of the state path under q (initial + step + chunk factors).
    pub log_q: S,
    /// Sum over t of `log N(y_t; C x_t + d, R)`; zero without observations.
    pub log_lik: S,
    /// Sum of the per-step transition KL contributions.
    pub trans_kl: S,
    /// Largest number of conditioning points held at once (chunked only).
    pub peak_conditioning: usize,
}

/// Draw one trajectory and evaluate every objective term along it.
///
/// All randomness comes from `streams`; with equal seeds the result is
/// bitwise identical. Works for `S = f64` (sampling, evaluation) and for
/// tape variables (gradients), with the noise realisations held constant.
pub fn evaluate_sample<S: Scalar>(
    model: &GpssmModel<S>,
    spec: &PosteriorSpec<S>,
    caches: &[SparseGpCache<S>],
    observations: Option<&Mat<f64>>,
    controls: Option<&Mat<f64>>,
    streams: &mut TrajectoryStreams,
) -> Result<SampleEval<S>> {
    let d = model.latent_dim;
    let t_len = spec.t_len;
    if let Some(obs) = observations {
        if obs.rows() != t_len {
            return Err(Error::DimensionMismatch { expected: t_len, got: obs.rows(), context: "observation rows" });
        }
    }
    let witness = spec.q_x1.mean[0];
    let zero = witness.lift(0.0);

    let mut states: Vec<Vec<S>> = Vec::with_capacity(t_len);
    let mut f_values: Vec<Vec<S>> = Vec::with_capacity(t_len.saturating_sub(1));
    let mut log_q = zero;
    let mut log_lik = zero;
    let mut trans_kl = zero;
    let mut peak_conditioning = 0usize;

    // initial state
    let eps = normal_vec(&mut streams.initial, d);
    let x1 = spec.q_x1.affine_sample(&eps);
    log_q = log_q + gaussian_log_density(&x1, &spec.q_x1)?;
    if let Some(obs) = observations {
        log_lik = log_lik + model.emission.log_density(obs.row(0), &x1);
    }
    states.push(x1);
    if t_len == 1 {
        return Ok(SampleEval { states, f_values, u_draws: None, log_q, log_lik, trans_kl, peak_conditioning });
    }

    // step covariance sample + density, reusing the noise for the density
    let dense_step = |mean: &[S],
                          cov: &Mat<S>,
                          rng: &mut rand_chacha::ChaCha8Rng|
     -> Result<(Vec<S>, S, PsdMatrix<S>)> {
        let chol = cholesky(cov)?;
        let eps = normal_vec(rng, mean.len());
        let x = chol.affine_sample(mean, &eps);
        let quad: f64 = eps.iter().map(|e| e * e).sum();
        let dens = (chol.logdet() + quad + mean.len() as f64 * LN_2PI) * (-0.5);
        Ok((x, dens, chol))
    };

    let mut u_draws: Option<Vec<Vec<S>>> = None;

    match &spec.variant {
        PosteriorVariant::FactorisedLinear | PosteriorVariant::FactorisedNonLinear => {
            let nonlinear = matches!(spec.variant, PosteriorVariant::FactorisedNonLinear);
            for t in 0..t_len - 1 {
                let x_t = states[t].clone();
                let aug = augment(&x_t, controls.map(|c| c.row(t)));
                let mut mu_f = Vec::with_capacity(d);
                let mut c_f = Vec::with_capacity(d);
                for j in 0..d {
                    let cond = model.gps[j].conditional(&caches[j], &aug)?;
                    mu_f.push(cond.posterior_mean);
                    c_f.push(cond.marg_var);
                }
                let a = spec.a_at(t);
                let b = spec.b_at(t);
                let s = spec.s_at(t);
                let (mean_q, cov) = if nonlinear {
                    let mut m = a.matvec(&mu_f);
                    for i in 0..d {
                        m[i] = m[i] + b[i];
                    }
                    (m, diag_mat(s).add(&a.sandwich_diag(&c_f)))
                } else {
                    let mut m = a.matvec(&x_t);
                    for i in 0..d {
                        m[i] = m[i] + b[i];
                    }
                    (m, diag_mat(s))
                };
                let (x_next, dens, chol) = dense_step(&mean_q, &cov, &mut streams.process)?;
                log_q = log_q + dens;
                trans_kl = trans_kl
                    + if nonlinear {
                        let s_star_diag: Vec<S> = (0..d).map(|i| cov.at(i, i)).collect();
                        corrected_dense_kl(&s_star_diag, &chol, &c_f, &mean_q, &mu_f, &model.process_noise)
                    } else {
                        factorised_diag_kl(s, Some(&c_f), &mean_q, &mu_f, &model.process_noise)
                    };
                if let Some(obs) = observations {
                    log_lik = log_lik + model.emission.log_density(obs.row(t + 1), &x_next);
                }
                states.push(x_next);
                f_values.push(mu_f);
            }
        }

        PosteriorVariant::Vcdt | PosteriorVariant::Prssm { biased_independent_f: false } => {
            let corrected_prssm = matches!(spec.variant, PosteriorVariant::Prssm { .. });
            // one inducing draw per trajectory per dimension
            let mut us = Vec::with_capacity(d);
            let mut alpha_u = Vec::with_capacity(d);
            for j in 0..d {
                let gp = &model.gps[j];
                let eps_u = normal_vec(&mut streams.inducing, gp.n_inducing());
                let u = gp.sigma_u.affine_sample(&gp.mu_u, &eps_u);
                let diff: Vec<S> = u.iter().zip(&caches[j].m_z).map(|(&a, &b)| a - b).collect();
                let tmp = caches[j].chol_kzz.solve_lower(&diff)?;
                alpha_u.push(caches[j].chol_kzz.solve_lower_t(&tmp)?);
                us.push(u);
            }
            u_draws = Some(us);
            for t in 0..t_len - 1 {
                let x_t = states[t].clone();
                let aug = augment(&x_t, controls.map(|c| c.row(t)));
                let mut f_u = Vec::with_capacity(d);
                let mut c_fu = Vec::with_capacity(d);
                for j in 0..d {
                    let (m, v) = model.gps[j].conditional_given_u(&caches[j], &alpha_u[j], &aug)?;
                    f_u.push(m);
                    c_fu.push(v);
                }
                let (mean_q, cov) = if corrected_prssm {
                    let q = &model.process_noise;
                    let cov_diag: Vec<S> = (0..d).map(|i| q[i] + c_fu[i]).collect();
                    (f_u.clone(), diag_mat(&cov_diag))
                } else {
                    let a = spec.a_at(t);
                    let b = spec.b_at(t);
                    let s = spec.s_at(t);
                    let mut m = a.matvec(&f_u);
                    for i in 0..d {
                        m[i] = m[i] + b[i];
                    }
                    (m, diag_mat(s).add(&a.sandwich_diag(&c_fu)))
                };
                let (x_next, dens, chol) = dense_step(&mean_q, &cov, &mut streams.process)?;
                if !corrected_prssm {
                    let s_star_diag: Vec<S> = (0..d).map(|i| cov.at(i, i)).collect();
                    trans_kl = trans_kl
                        + corrected_dense_kl(&s_star_diag, &chol, &c_fu, &mean_q, &f_u, &model.process_noise);
                }
                log_q = log_q + dens;
                if let Some(obs) = observations {
                    log_lik = log_lik + model.emission.log_density(obs.row(t + 1), &x_next);
                }
                states.push(x_next);
                f_values.push(f_u);
            }
        }

        PosteriorVariant::Prssm { biased_independent_f: true } => {
            // an evaluation-only mode: f is drawn fresh from its marginal at
            // every step, breaking the correlation between steps
            for t in 0..t_len - 1 {
                let x_t = states[t].clone();
                let aug = augment(&x_t, controls.map(|c| c.row(t)));
                let mut f_t = Vec::with_capacity(d);
                for j in 0..d {
                    let cond = model.gps[j].conditional(&caches[j], &aug)?;
                    f_t.push(draw_or_mean(cond.posterior_mean, cond.marg_var, &mut streams.function));
                }
                let (x_next, dens, _chol) =
                    dense_step(&f_t, &diag_mat(&model.process_noise), &mut streams.process)?;
                log_q = log_q + dens;
                if let Some(obs) = observations {
                    log_lik = log_lik + model.emission.log_density(obs.row(t + 1), &x_next);
                }
                states.push(x_next);
                f_values.push(f_t);
            }
        }

        PosteriorVariant::NonFactorisedChunked { chunk_length } => {
            let blocks = chunk_blocks(t_len, *chunk_length);
            for (bi, &(s_idx, e_idx)) in blocks.iter().enumerate() {
                if s_idx > 0 {
                    // free chunk-start factor
                    let dist = &spec.chunk_dists[bi - 1];
                    let eps = normal_vec(&mut streams.chunk, d);
                    let x_s = dist.affine_sample(&eps);
                    log_q = log_q + gaussian_log_density(&x_s, dist)?;
                    if let Some(obs) = observations {
                        log_lik = log_lik + model.emission.log_density(obs.row(s_idx), &x_s);
                    }
                    states.push(x_s);
                }
                // per-dimension conditioning on this chunk's function draws
                let mut cond_states: Vec<ConditioningState<S, SparsePosteriorCov<'_, S>>> = (0..d)
                    .map(|j| {
                        ConditioningState::new(SparsePosteriorCov {
                            kernel: &model.gps[j].kernel,
                            mean_fn: &model.gps[j].mean_fn,
                            cache: &caches[j],
                            sigma_u: &model.gps[j].sigma_u,
                        })
                    })
                    .collect();
                for t in s_idx..=e_idx {
                    if t == t_len - 1 {
                        break;
                    }
                    let x_t = states[t].clone();
                    let aug = augment(&x_t, controls.map(|c| c.row(t)));
                    let boundary = t == e_idx;
                    let mut f_t = Vec::with_capacity(d);
                    for j in 0..d {
                        let cond = cond_states[j].conditional(&aug)?;
                        let f = draw_or_mean(cond.mean, cond.var, &mut streams.function);
                        if !boundary && cond.duplicate_of.is_none() {
                            cond_states[j].extend(cond.prep, f)?;
                            peak_conditioning = peak_conditioning.max(cond_states[j].len());
                        }
                        f_t.push(f);
                    }
                    if boundary {
                        let next_dist = &spec.chunk_dists[bi];
                        trans_kl = trans_kl + boundary_kl(next_dist, &f_t, &model.process_noise);
                        // x_{t+1} is drawn by the next block's start factor
                    } else {
                        let a = spec.a_at(t);
                        let b = spec.b_at(t);
                        let s = spec.s_at(t);
                        let mut mean_q = a.matvec(&f_t);
                        for i in 0..d {
                            mean_q[i] = mean_q[i] + b[i];
                        }
                        let (x_next, dens, _chol) =
                            dense_step(&mean_q, &diag_mat(s), &mut streams.process)?;
                        log_q = log_q + dens;
                        trans_kl = trans_kl
                            + factorised_diag_kl(s, None, &mean_q, &f_t, &model.process_noise);
                        if let Some(obs) = observations {
                            log_lik = log_lik + model.emission.log_density(obs.row(t + 1), &x_next);
                        }
                        states.push(x_next);
                    }
                    f_values.push(f_t);
                }
            }
        }
    }

    Ok(SampleEval { states, f_values, u_draws, log_q, log_lik, trans_kl, peak_conditioning })
}

/// Draw one trajectory from the posterior (f64 path).
pub fn sample_posterior(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    controls: Option<&Mat<f64>>,
    master_seed: u64,
    trajectory_index: u64,
) -> Result<TrajectorySample> {
    let caches = model.gp_caches()?;
    let mut streams = TrajectoryStreams::new(master_seed, trajectory_index);
    let ev = evaluate_sample(model, spec, &caches, None, controls, &mut streams)?;
    let d = model.latent_dim;
    let t = ev.states.len();
    let mut states = Mat::zeros(t, d);
    for (i, row) in ev.states.iter().enumerate() {
        for j in 0..d {
            states.set(i, j, row[j]);
        }
    }
    let mut f_vals = Mat::zeros(ev.f_values.len(), d);
    for (i, row) in ev.f_values.iter().enumerate() {
        for j in 0..d {
            f_vals.set(i, j, row[j]);
        }
    }
    let inducing_draw = ev.u_draws.map(|us| {
        let m = us[0].len();
        let mut out = Mat::zeros(d, m);
        for (j, u) in us.iter().enumerate() {
            for k in 0..m {
                out.set(j, k, u[k]);
            }
        }
        out
    });
    Ok(TrajectorySample {
        states,
        function_values: Some(f_vals),
        inducing_draw,
        log_density_q: ev.log_q,
    })
}

/// What the sampler had in hand when it took step `t -> t+1`.
pub enum StepContext<'a> {
    /// Factorised variants: nothing sampled beyond the state.
    Marginal,
    /// One inducing draw per dimension, D x M.
    InducingDraw(&'a Mat<f64>),
    /// The sampled function value at `x_t`, per dimension.
    FunctionValue(&'a [f64]),
}

/// The step distribution `q(x_{t+1} | ...)` for variant-appropriate context.
fn step_distribution(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    caches: &[SparseGpCache<f64>],
    t: usize,
    x_t: &[f64],
    context: &StepContext<'_>,
    control: Option<&[f64]>,
) -> Result<GaussianDist<f64>> {
    let d = model.latent_dim;
    let aug = augment(x_t, control);
    // chunk boundary steps are free factors
    if let PosteriorVariant::NonFactorisedChunked { chunk_length } = &spec.variant {
        let blocks = chunk_blocks(spec.t_len, *chunk_length);
        if let Some(bi) = blocks.iter().position(|&(s, _)| s == t + 1) {
            return Ok(spec.chunk_dists[bi - 1].clone());
        }
    }
    match (&spec.variant, context) {
        (PosteriorVariant::FactorisedLinear, StepContext::Marginal) => {
            let a = spec.a_at(t);
            let mut mean = a.matvec(x_t);
            for i in 0..d {
                mean[i] += spec.b_at(t)[i];
            }
            Ok(GaussianDist { mean, cov: cholesky(&diag_mat(spec.s_at(t)))? })
        }
        (PosteriorVariant::FactorisedNonLinear, StepContext::Marginal) => {
            let mut mu_f = Vec::with_capacity(d);
            let mut c_f = Vec::with_capacity(d);
            for j in 0..d {
                let cond = model.gps[j].conditional(&caches[j], &aug)?;
                mu_f.push(cond.posterior_mean);
                c_f.push(cond.marg_var);
            }
            let a = spec.a_at(t);
            let mut mean = a.matvec(&mu_f);
            for i in 0..d {
                mean[i] += spec.b_at(t)[i];
            }
            let cov = diag_mat(spec.s_at(t)).add(&a.sandwich_diag(&c_f));
            Ok(GaussianDist { mean, cov: cholesky(&cov)? })
        }
        (PosteriorVariant::Vcdt, StepContext::InducingDraw(u))
        | (PosteriorVariant::Prssm { biased_independent_f: false }, StepContext::InducingDraw(u)) => {
            let mut f_u = Vec::with_capacity(d);
            let mut c_fu = Vec::with_capacity(d);
            for j in 0..d {
                let diff: Vec<f64> = (0..u.cols()).map(|k| u.at(j, k) - caches[j].m_z[k]).collect();
                let tmp = caches[j].chol_kzz.solve_lower(&diff)?;
                let alpha = caches[j].chol_kzz.solve_lower_t(&tmp)?;
                let (m, v) = model.gps[j].conditional_given_u(&caches[j], &alpha, &aug)?;
                f_u.push(m);
                c_fu.push(v);
            }
            if matches!(spec.variant, PosteriorVariant::Prssm { .. }) {
                let cov_diag: Vec<f64> =
                    (0..d).map(|i| model.process_noise[i] + c_fu[i]).collect();
                Ok(GaussianDist { mean: f_u, cov: cholesky(&diag_mat(&cov_diag))? })
            } else {
                let a = spec.a_at(t);
                let mut mean = a.matvec(&f_u);
                for i in 0..d {
                    mean[i] += spec.b_at(t)[i];
                }
                let cov = diag_mat(spec.s_at(t)).add(&a.sandwich_diag(&c_fu));
                Ok(GaussianDist { mean, cov: cholesky(&cov)? })
            }
        }
        (PosteriorVariant::Prssm { biased_independent_f: true }, StepContext::FunctionValue(f)) => {
            Ok(GaussianDist {
                mean: f.to_vec(),
                cov: cholesky(&diag_mat(&model.process_noise))?,
            })
        }
        (PosteriorVariant::NonFactorisedChunked { .. }, StepContext::FunctionValue(f)) => {
            let a = spec.a_at(t);
            let mut mean = a.matvec(f);
            for i in 0..d {
                mean[i] += spec.b_at(t)[i];
            }
            Ok(GaussianDist { mean, cov: cholesky(&diag_mat(spec.s_at(t)))? })
        }
        _ => Err(Error::Config(format!(
            "step context does not match posterior variant {:?}",
            spec.variant
        ))),
    }
}

/// `log q(x_{t+1} | x_t, context)` under the posterior's step factor.
pub fn step_log_density(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    caches: &[SparseGpCache<f64>],
    t: usize,
    x_t: &[f64],
    x_next: &[f64],
    context: &StepContext<'_>,
    control: Option<&[f64]>,
) -> Result<f64> {
    let dist = step_distribution(model, spec, caches, t, x_t, context, control)?;
    gaussian_log_density(x_next, &dist)
}

/// The analytic per-step transition KL contribution at `x_t`.
///
/// For `Prssm` this is exactly zero: that variant's objective deliberately
/// omits the correction.
pub fn transition_kl_term(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    caches: &[SparseGpCache<f64>],
    t: usize,
    x_t: &[f64],
    context: &StepContext<'_>,
    control: Option<&[f64]>,
) -> Result<f64> {
    let d = model.latent_dim;
    let q = &model.process_noise;
    let aug = augment(x_t, control);
    match (&spec.variant, context) {
        (PosteriorVariant::Prssm { .. }, _) => Ok(0.0),
        (PosteriorVariant::FactorisedLinear, StepContext::Marginal) => {
            let mut mu_f = Vec::with_capacity(d);
            let mut c_f = Vec::with_capacity(d);
            for j in 0..d {
                let cond = model.gps[j].conditional(&caches[j], &aug)?;
                mu_f.push(cond.posterior_mean);
                c_f.push(cond.marg_var);
            }
            let a = spec.a_at(t);
            let mut mean_q = a.matvec(x_t);
            for i in 0..d {
                mean_q[i] += spec.b_at(t)[i];
            }
            Ok(factorised_diag_kl(spec.s_at(t), Some(&c_f), &mean_q, &mu_f, q))
        }
        (PosteriorVariant::FactorisedNonLinear, StepContext::Marginal) => {
            let mut mu_f = Vec::with_capacity(d);
            let mut c_f = Vec::with_capacity(d);
            for j in 0..d {
                let cond = model.gps[j].conditional(&caches[j], &aug)?;
                mu_f.push(cond.posterior_mean);
                c_f.push(cond.marg_var);
            }
            let a = spec.a_at(t);
            let mut mean_q = a.matvec(&mu_f);
            for i in 0..d {
                mean_q[i] += spec.b_at(t)[i];
            }
            let cov = diag_mat(spec.s_at(t)).add(&a.sandwich_diag(&c_f));
            let chol = cholesky(&cov)?;
            let diag: Vec<f64> = (0..d).map(|i| cov.at(i, i)).collect();
            Ok(corrected_dense_kl(&diag, &chol, &c_f, &mean_q, &mu_f, q))
        }
        (PosteriorVariant::Vcdt, StepContext::InducingDraw(u)) => {
            let mut f_u = Vec::with_capacity(d);
            let mut c_fu = Vec::with_capacity(d);
            for j in 0..d {
                let diff: Vec<f64> = (0..u.cols()).map(|k| u.at(j, k) - caches[j].m_z[k]).collect();
                let tmp = caches[j].chol_kzz.solve_lower(&diff)?;
                let alpha = caches[j].chol_kzz.solve_lower_t(&tmp)?;
                let (m, v) = model.gps[j].conditional_given_u(&caches[j], &alpha, &aug)?;
                f_u.push(m);
                c_fu.push(v);
            }
            let a = spec.a_at(t);
            let mut mean_q = a.matvec(&f_u);
            for i in 0..d {
                mean_q[i] += spec.b_at(t)[i];
            }
            let cov = diag_mat(spec.s_at(t)).add(&a.sandwich_diag(&c_fu));
            let chol = cholesky(&cov)?;
            let diag: Vec<f64> = (0..d).map(|i| cov.at(i, i)).collect();
            Ok(corrected_dense_kl(&diag, &chol, &c_fu, &mean_q, &f_u, q))
        }
        (PosteriorVariant::NonFactorisedChunked { chunk_length }, StepContext::FunctionValue(f)) => {
            let blocks = chunk_blocks(spec.t_len, *chunk_length);
            if let Some(bi) = blocks.iter().position(|&(s, _)| s == t + 1) {
                return Ok(boundary_kl(&spec.chunk_dists[bi - 1], f, q));
            }
            let a = spec.a_at(t);
            let mut mean_q = a.matvec(f);
            for i in 0..d {
                mean_q[i] += spec.b_at(t)[i];
            }
            Ok(factorised_diag_kl(spec.s_at(t), None, &mean_q, f, q))
        }
        _ => Err(Error::Config(format!(
            "step context does not match posterior variant {:?}",
            spec.variant
        ))),
    }
}

/// Re-evaluate the log density of a stored sample under the posterior.
///
/// Matches the `log_density_q` the sampler accumulated, using only the
/// stored states, function values, and inducing draws.
pub fn trajectory_log_density(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    sample: &TrajectorySample,
    controls: Option<&Mat<f64>>,
) -> Result<f64> {
    let caches = model.gp_caches()?;
    let t_len = sample.states.rows();
    let x1: Vec<f64> = sample.states.row(0).to_vec();
    let mut total = gaussian_log_density(&x1, &spec.q_x1)?;
    for t in 0..t_len.saturating_sub(1) {
        let x_t: Vec<f64> = sample.states.row(t).to_vec();
        let x_next: Vec<f64> = sample.states.row(t + 1).to_vec();
        let control = controls.map(|c| c.row(t));
        let ctx = match &spec.variant {
            PosteriorVariant::FactorisedLinear | PosteriorVariant::FactorisedNonLinear => {
                StepContext::Marginal
            }
            PosteriorVariant::Vcdt | PosteriorVariant::Prssm { biased_independent_f: false } => {
                StepContext::InducingDraw(sample.inducing_draw.as_ref().ok_or_else(|| {
                    Error::Config("sample lacks the inducing draw its variant requires".into())
                })?)
            }
            PosteriorVariant::Prssm { biased_independent_f: true }
            | PosteriorVariant::NonFactorisedChunked { .. } => {
                StepContext::FunctionValue(
                    sample
                        .function_values
                        .as_ref()
                        .ok_or_else(|| {
                            Error::Config("sample lacks the function values its variant requires".into())
                        })?
                        .row(t),
                )
            }
        };
        total += step_log_density(model, spec, &caches, t, &x_t, &x_next, &ctx, control)?;
    }
    Ok(total)
}

/// Initialise step parameters from the stationary one-step filtering factors
/// of the linearised model: with precision `P = Q^{-1} + C' R^{-1} C`,
///
/// * `S* = P^{-1}`
/// * `A = S* Q^{-1}`
/// * `b_t = S* C' R^{-1} (y_{t+1} - d)`
///
/// The diagonal step covariance starts at `diag(S*)`, with the marginal
/// function variance subtracted first for the variants whose step covariance
/// adds it back, clamped at 1e-8. Chunk-start distributions (chunked
/// variant) start at `N(b_{s-1}, diag(S*))`.
pub fn filtering_init(
    model: &GpssmModel<f64>,
    observations: &Mat<f64>,
    variant: PosteriorVariant,
    tie_across_time: bool,
) -> Result<PosteriorSpec<f64>> {
    model.validate()?;
    let t_len = observations.rows();
    let d = model.latent_dim;
    let e = model.emission.obs_dim();
    let q_x1 = model.initial_state.clone();
    if !variant.has_step_params() {
        return Ok(PosteriorSpec {
            variant,
            t_len,
            q_x1,
            a: Vec::new(),
            b: Vec::new(),
            s: Vec::new(),
            chunk_dists: Vec::new(),
            tie_across_time,
        });
    }

    let c = &model.emission.c;
    let r = &model.emission.r_diag;
    let q = &model.process_noise;
    // P = Q^{-1} + C' R^{-1} C
    let mut p = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = if i == j { 1.0 / q[i] } else { 0.0 };
            for k in 0..e {
                acc += c.at(k, i) * c.at(k, j) / r[k];
            }
            p.set(i, j, acc);
        }
    }
    // S* = P^{-1}: scalar reciprocal in one dimension (exact), otherwise
    // column solves against the factor, symmetrised against roundoff
    let mut s_star = Mat::zeros(d, d);
    if d == 1 {
        s_star.set(0, 0, 1.0 / p.at(0, 0));
    } else {
        let p_chol = cholesky(&p)?;
        for j in 0..d {
            let mut unit = vec![0.0; d];
            unit[j] = 1.0;
            let col = crate::linalg::tri_solve(&p_chol, &unit)?;
            for i in 0..d {
                s_star.set(i, j, col[i]);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (s_star.at(i, j) + s_star.at(j, i));
                s_star.set(i, j, avg);
                s_star.set(j, i, avg);
            }
        }
    }
    // A = S* Q^{-1}
    let mut a_mat = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            a_mat.set(i, j, s_star.at(i, j) / q[j]);
        }
    }
    // gain = S* C' R^{-1}
    let mut gain = Mat::zeros(d, e);
    for i in 0..d {
        for k in 0..e {
            let mut acc = 0.0;
            for j in 0..d {
                acc += s_star.at(i, j) * c.at(k, j);
            }
            gain.set(i, k, acc / r[k]);
        }
    }
    let b_for = |t: usize| -> Vec<f64> {
        let mut resid = vec![0.0; e];
        for k in 0..e {
            resid[k] = observations.at(t + 1, k) - model.emission.d[k];
        }
        gain.matvec(&resid)
    };

    // step covariance diagonal, optionally netting out the function variance
    // that the step covariance construction adds back
    let subtract_c = matches!(
        variant,
        PosteriorVariant::FactorisedNonLinear | PosteriorVariant::Vcdt
    );
    let s_diag: Vec<f64> = if subtract_c {
        let origin = vec![0.0; d + model.control_dim];
        let c_bar: Vec<f64> = model.gps.iter().map(|gp| gp.kernel.eval_diag(&origin)).collect();
        let corrected = s_star.add(&a_mat.sandwich_diag(&c_bar.iter().map(|v| -v).collect::<Vec<_>>()));
        (0..d).map(|i| corrected.at(i, i).max(1e-8)).collect()
    } else {
        (0..d).map(|i| s_star.at(i, i).max(1e-8)).collect()
    };

    let n_steps = t_len.saturating_sub(1);
    let a = if tie_across_time { vec![a_mat.clone()] } else { vec![a_mat.clone(); n_steps] };
    let s = if tie_across_time { vec![s_diag.clone()] } else { vec![s_diag.clone(); n_steps] };
    let b: Vec<Vec<f64>> = (0..n_steps).map(b_for).collect();

    let chunk_dists = if let PosteriorVariant::NonFactorisedChunked { chunk_length } = &variant {
        let blocks = chunk_blocks(t_len, *chunk_length);
        let marg_diag: Vec<f64> = (0..d).map(|i| s_star.at(i, i).max(1e-8)).collect();
        let cov = cholesky(&diag_mat(&marg_diag))?;
        blocks[1..]
            .iter()
            .map(|&(st, _)| GaussianDist { mean: b_for(st - 1), cov: cov.clone() })
            .collect()
    } else {
        Vec::new()
    };

    Ok(PosteriorSpec { variant, t_len, q_x1, a, b, s, chunk_dists, tie_across_time })
}
