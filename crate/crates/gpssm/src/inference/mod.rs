//! The training objective and optimiser.
//!
//! The objective is the evidence lower bound in its per-step form:
//!
//! `L = sum_t E[log p(y_t | x_t)] - KL[q(u) || p(u)] - KL[q(x_1) || p(x_1)]
//!      - sum_t E[transition KL at step t]`
//!
//! The expectations are Monte Carlo averages over reparameterised trajectory
//! samples, so the whole estimate is differentiable in every parameter. With
//! a fixed seed the estimate and its gradient are bitwise reproducible.

pub mod params;

use crate::autodiff::{Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::gp::kl_qu_pu;
use crate::linalg::{gaussian_kl, Mat};
use crate::model::GpssmModel;
use crate::posterior::{evaluate_sample, PosteriorSpec};
use crate::rng::{stream, Role, TrajectoryStreams};
use params::{build, make_layout, ModelStructure, ParamGroup, ParamLayout};
use rand::RngCore;

/// A Monte Carlo estimate of the bound and its pieces.
#[derive(Debug, Clone)]
pub struct ElboEstimate {
    /// `expected_log_lik - kl_u - kl_x1 - expected_transition_kl`.
    pub value: f64,
    pub expected_log_lik: f64,
    pub kl_u: f64,
    pub kl_x1: f64,
    pub expected_transition_kl: f64,
    pub n_samples: usize,
    /// Standard error of the Monte Carlo part (log lik minus transition KL).
    pub std_error: f64,
}

fn check_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what: what.to_string() })
    }
}

/// Estimate the bound for a concrete model/posterior pair.
pub fn elbo(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    observations: &Mat<f64>,
    controls: Option<&Mat<f64>>,
    n_samples: usize,
    seed: u64,
) -> Result<ElboEstimate> {
    assert!(n_samples >= 1, "need at least one sample");
    let caches = model.gp_caches()?;
    let mut contribs = Vec::with_capacity(n_samples);
    let mut log_lik_sum = 0.0;
    let mut trans_sum = 0.0;
    for i in 0..n_samples {
        let mut streams = TrajectoryStreams::new(seed, i as u64);
        let ev = evaluate_sample(model, spec, &caches, Some(observations), controls, &mut streams)?;
        check_finite(ev.log_lik, "per-sample log likelihood")?;
        check_finite(ev.trans_kl, "per-sample transition KL")?;
        log_lik_sum += ev.log_lik;
        trans_sum += ev.trans_kl;
        contribs.push(ev.log_lik - ev.trans_kl);
    }
    let n = n_samples as f64;
    let mut kl_u = 0.0;
    for (gp, cache) in model.gps.iter().zip(&caches) {
        kl_u += kl_qu_pu(gp, cache)?;
    }
    check_finite(kl_u, "inducing KL")?;
    let kl_x1 = gaussian_kl(&spec.q_x1, &model.initial_state)?;
    check_finite(kl_x1, "initial-state KL")?;
    let expected_log_lik = log_lik_sum / n;
    let expected_transition_kl = trans_sum / n;
    let value = check_finite(expected_log_lik - kl_u - kl_x1 - expected_transition_kl, "bound")?;
    let mean_c = contribs.iter().sum::<f64>() / n;
    let std_error = if n_samples > 1 {
        let var = contribs.iter().map(|c| (c - mean_c) * (c - mean_c)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(ElboEstimate {
        value,
        expected_log_lik,
        kl_u,
        kl_x1,
        expected_transition_kl,
        n_samples,
        std_error,
    })
}

/// Estimate the bound and its gradient in unconstrained coordinates.
///
/// Each Monte Carlo sample runs on its own tape with the same noise as the
/// f64 path (common random numbers), so finite differences of [`elbo`] at
/// the same seed converge to this gradient. Entries of frozen groups are
/// zeroed.
pub fn elbo_gradient(
    structure: &ModelStructure,
    layout: &ParamLayout,
    theta: &[f64],
    observations: &Mat<f64>,
    controls: Option<&Mat<f64>>,
    n_samples: usize,
    seed: u64,
    frozen: &[ParamGroup],
) -> Result<(ElboEstimate, Vec<f64>)> {
    assert!(n_samples >= 1, "need at least one sample");
    let n = n_samples as f64;
    let p = theta.len();
    let mut grad = vec![0.0; p];
    let mut contribs = Vec::with_capacity(n_samples);
    let mut log_lik_sum = 0.0;
    let mut trans_sum = 0.0;

    for i in 0..n_samples {
        let tape = Tape::with_capacity(1 << 16);
        let vars: Vec<Var<'_>> = theta.iter().map(|&v| tape.var(v)).collect();
        let (vmodel, vspec) = build(structure, layout, &vars)?;
        let vcaches = vmodel.gp_caches()?;
        let mut streams = TrajectoryStreams::new(seed, i as u64);
        let ev = evaluate_sample(&vmodel, &vspec, &vcaches, Some(observations), controls, &mut streams)?;
        let objective = ev.log_lik - ev.trans_kl;
        check_finite(ev.log_lik.val(), "per-sample log likelihood")?;
        check_finite(ev.trans_kl.val(), "per-sample transition KL")?;
        log_lik_sum += ev.log_lik.val();
        trans_sum += ev.trans_kl.val();
        contribs.push(objective.val());
        let g = tape.gradient(objective);
        for (k, v) in vars.iter().enumerate() {
            grad[k] += g.wrt(*v) / n;
        }
    }

    // analytic KL terms once, on their own tape
    let (kl_u_val, kl_x1_val) = {
        let tape = Tape::with_capacity(1 << 14);
        let vars: Vec<Var<'_>> = theta.iter().map(|&v| tape.var(v)).collect();
        let (vmodel, vspec) = build(structure, layout, &vars)?;
        let vcaches = vmodel.gp_caches()?;
        let mut kl_u = vars[0].lift(0.0);
        for (gp, cache) in vmodel.gps.iter().zip(&vcaches) {
            kl_u = kl_u + kl_qu_pu(gp, cache)?;
        }
        let kl_x1 = gaussian_kl(&vspec.q_x1, &vmodel.initial_state)?;
        let total = kl_u + kl_x1;
        let g = tape.gradient(total);
        for (k, v) in vars.iter().enumerate() {
            grad[k] -= g.wrt(*v);
        }
        (kl_u.val(), kl_x1.val())
    };
    check_finite(kl_u_val, "inducing KL")?;
    check_finite(kl_x1_val, "initial-state KL")?;

    for (k, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite { what: format!("gradient of {}", layout.entry_at(k).name) });
        }
    }
    if !frozen.is_empty() {
        for e in &layout.entries {
            if frozen.contains(&e.group) {
                for g in &mut grad[e.offset..e.offset + e.len] {
                    *g = 0.0;
                }
            }
        }
    }

    let expected_log_lik = log_lik_sum / n;
    let expected_transition_kl = trans_sum / n;
    let value = check_finite(
        expected_log_lik - kl_u_val - kl_x1_val - expected_transition_kl,
        "bound",
    )?;
    let mean_c = contribs.iter().sum::<f64>() / n;
    let std_error = if n_samples > 1 {
        let var = contribs.iter().map(|c| (c - mean_c) * (c - mean_c)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok((
        ElboEstimate {
            value,
            expected_log_lik,
            kl_u: kl_u_val,
            kl_x1: kl_x1_val,
            expected_transition_kl,
            n_samples,
            std_error,
        },
        grad,
    ))
}

/// Convenience wrapper: gradient for a concrete pair, named by parameter.
pub fn elbo_gradient_named(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    observations: &Mat<f64>,
    controls: Option<&Mat<f64>>,
    n_samples: usize,
    seed: u64,
) -> Result<(ElboEstimate, Vec<(String, Vec<f64>)>)> {
    let structure = ModelStructure::infer(model, spec)?;
    let layout = make_layout(&structure);
    let theta = params::flatten(&structure, &layout, model, spec)?;
    let (est, grad) = elbo_gradient(&structure, &layout, &theta, observations, controls, n_samples, seed, &[])?;
    let named = layout
        .entries
        .iter()
        .map(|e| (e.name.clone(), grad[e.offset..e.offset + e.len].to_vec()))
        .collect();
    Ok((est, named))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n_mc_samples: usize,
    pub max_iterations: usize,
    pub seed: u64,
    /// Learning rate for variational groups.
    pub lr_variational: f64,
    /// Learning rate for model hyperparameters.
    pub lr_hyper: f64,
    /// Per-group learning-rate overrides.
    pub lr_overrides: Vec<(ParamGroup, f64)>,
    /// Groups held fixed (gradients zeroed, no updates).
    pub freeze: Vec<ParamGroup>,
    /// Multiplicative decay steps: `(iteration, factor)` applied from that
    /// iteration on, compounding with earlier steps.
    pub lr_decay: Vec<(usize, f64)>,
    /// Stop when the windowed relative improvement falls below this.
    pub rel_tol: f64,
    /// Window length (iterations) for the convergence check; 0 disables it.
    pub rel_window: usize,
    /// Rescale gradients whose global norm exceeds this before the update.
    /// Reparameterised trajectories occasionally produce gradients many
    /// orders of magnitude above typical; unclipped, a single spike inflates
    /// Adam's second moment enough to freeze progress for thousands of
    /// iterations. `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_mc_samples: 100,
            max_iterations: 1000,
            seed: 0,
            lr_variational: 1e-2,
            lr_hyper: 1e-3,
            lr_overrides: Vec::new(),
            freeze: Vec::new(),
            lr_decay: Vec::new(),
            rel_tol: 1e-6,
            rel_window: 200,
            clip_norm: 1e3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iteration: usize,
    pub elbo: f64,
    pub expected_log_lik: f64,
    pub kl_u: f64,
    pub kl_x1: f64,
    pub expected_transition_kl: f64,
    pub wall_ms: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub theta: Vec<f64>,
    pub model: GpssmModel<f64>,
    pub spec: PosteriorSpec<f64>,
    pub trace: Vec<TraceRow>,
    /// Set when optimisation aborted on repeated non-finite evaluations;
    /// `theta` then holds the last finite iterate.
    pub aborted: Option<String>,
    pub iterations_run: usize,
}

/// Rescale `grad` onto the sphere of radius `max_norm` if it lies outside;
/// returns the norm before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(p: usize) -> Self {
        Adam { m: vec![0.0; p], v: vec![0.0; p], t: 0 }
    }

    /// Ascent step with per-coordinate learning rates.
    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - B1.powi(self.t);
        let bc2 = 1.0 - B2.powi(self.t);
        for k in 0..theta.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            theta[k] += lr[k] * mhat / (vhat.sqrt() + EPS);
        }
    }
}

/// Maximise the bound with Adam.
///
/// Non-finite evaluations skip the update; more than three in a row abort,
/// returning the last finite iterate with `aborted` set. The convergence
/// check compares short moving averages of the bound a window apart.
pub fn train(
    structure: &ModelStructure,
    theta0: Vec<f64>,
    observations: &Mat<f64>,
    controls: Option<&Mat<f64>>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let layout = make_layout(structure);
    let mut theta = theta0;
    if theta.len() != layout.total {
        return Err(Error::DimensionMismatch { expected: layout.total, got: theta.len(), context: "initial parameters" });
    }
    let lr_for = |group: ParamGroup| -> f64 {
        config
            .lr_overrides
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, lr)| *lr)
            .unwrap_or(if group.is_variational() { config.lr_variational } else { config.lr_hyper })
    };
    let mut base_lr = vec![0.0; layout.total];
    for e in &layout.entries {
        let lr = if config.freeze.contains(&e.group) { 0.0 } else { lr_for(e.group) };
        for k in e.offset..e.offset + e.len {
            base_lr[k] = lr;
        }
    }

    let mut adam = Adam::new(layout.total);
    let mut trace = Vec::new();
    let mut aborted = None;
    let mut consecutive_bad = 0usize;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations_run = 0usize;

    if config.max_iterations == 0 {
        let (model, spec) = build(structure, &layout, &theta)?;
        let est = elbo(&model, &spec, observations, controls, config.n_mc_samples, config.seed)?;
        trace.push(TraceRow {
            iteration: 0,
            elbo: est.value,
            expected_log_lik: est.expected_log_lik,
            kl_u: est.kl_u,
            kl_x1: est.kl_x1,
            expected_transition_kl: est.expected_transition_kl,
            wall_ms: 0.0,
        });
        return Ok(TrainOutcome { theta, model, spec, trace, aborted: None, iterations_run: 0 });
    }

    for it in 0..config.max_iterations {
        let t0 = std::time::Instant::now();
        let iter_seed = stream(config.seed, Role::TrainStep, it as u64).next_u64();
        let decay: f64 = config
            .lr_decay
            .iter()
            .filter(|(at, _)| it >= *at)
            .map(|(_, f)| f)
            .product();
        let result = elbo_gradient(
            structure,
            &layout,
            &theta,
            observations,
            controls,
            config.n_mc_samples,
            iter_seed,
            &config.freeze,
        );
        iterations_run = it + 1;
        match result {
            Ok((est, mut grad)) => {
                consecutive_bad = 0;
                clip_global_norm(&mut grad, config.clip_norm);
                let lr: Vec<f64> = base_lr.iter().map(|l| l * decay).collect();
                adam.step(&mut theta, &grad, &lr);
                trace.push(TraceRow {
                    iteration: it,
                    elbo: est.value,
                    expected_log_lik: est.expected_log_lik,
                    kl_u: est.kl_u,
                    kl_x1: est.kl_x1,
                    expected_transition_kl: est.expected_transition_kl,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                });
                history.push(est.value);
                if config.rel_window > 0 && history.len() > config.rel_window {
                    let w = (config.rel_window / 4).max(1);
                    let recent: f64 = history[history.len() - w..].iter().sum::<f64>() / w as f64;
                    let old_start = history.len() - config.rel_window - 1;
                    let old: f64 =
                        history[old_start..old_start + w].iter().sum::<f64>() / w as f64;
                    let rel = (recent - old).abs() / old.abs().max(1.0);
                    if rel < config.rel_tol {
                        break;
                    }
                }
            }
            Err(Error::NonFinite { what }) => {
                consecutive_bad += 1;
                if consecutive_bad > 3 {
                    aborted = Some(format!(
                        "non-finite {what} for {consecutive_bad} consecutive iterations at iteration {it}"
                    ));
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }

    let (model, spec) = build(structure, &layout, &theta)?;
    Ok(TrainOutcome { theta, model, spec, trace, aborted, iterations_run })
}
