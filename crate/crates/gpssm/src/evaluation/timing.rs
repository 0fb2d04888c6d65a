//! How sampling cost scales with trajectory length.
//!
//! Exact prior sampling conditions every new function value on all the
//! draws before it, so its per-trajectory cost grows superlinearly in T.
//! The inducing-draw posterior conditions only on a fixed set of M
//! points, so its cost grows linearly. The study times both at two
//! lengths and reports the ratios.

use crate::error::Result;
use crate::gp::{kernel_gram_psd, Kernel, MeanFunction, SparseGp};
use crate::linalg::{cholesky, GaussianDist, Mat};
use crate::model::{sample_prior_trajectory, EmissionModel, GpssmModel};
use crate::posterior::{filtering_init, sample_posterior, PosteriorVariant};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct TimingReport {
    pub base_t: usize,
    pub long_t: usize,
    /// Median seconds per trajectory, exact prior sampling.
    pub prior_short: f64,
    pub prior_long: f64,
    /// Median seconds per trajectory, inducing-draw posterior sampling.
    pub posterior_short: f64,
    pub posterior_long: f64,
}

impl TimingReport {
    pub fn prior_ratio(&self) -> f64 {
        self.prior_long / self.prior_short
    }

    pub fn posterior_ratio(&self) -> f64 {
        self.posterior_long / self.posterior_short
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    xs[xs.len() / 2]
}

fn study_model(m: usize) -> Result<GpssmModel<f64>> {
    let kernel = Kernel::SquaredExponentialArd { signal_variance: 1.0, lengthscales: vec![1.0] };
    let mut z = Mat::zeros(m, 1);
    for i in 0..m {
        z.set(i, 0, -3.0 + 6.0 * (i as f64 + 0.5) / m as f64);
    }
    let sigma_u = kernel_gram_psd(&kernel, &z)?;
    Ok(GpssmModel {
        latent_dim: 1,
        control_dim: 0,
        initial_state: GaussianDist { mean: vec![0.0], cov: cholesky(&Mat::identity(1))? },
        process_noise: vec![0.01],
        gps: vec![SparseGp { kernel, mean_fn: MeanFunction::Zero, z, mu_u: vec![0.0; m], sigma_u }],
        emission: EmissionModel { c: Mat::identity(1), d: vec![0.0], r_diag: vec![0.1] },
    })
}

/// Time prior and posterior sampling at `base_t` and `base_t * factor`.
pub fn timing_study(base_t: usize, factor: usize, repeats: usize, seed: u64) -> Result<TimingReport> {
    assert!(base_t >= 2 && factor >= 2 && repeats >= 1);
    let long_t = base_t * factor;
    let model = study_model(20)?;

    let time_prior = |t_len: usize| -> Result<f64> {
        let mut times = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let start = Instant::now();
            sample_prior_trajectory(&model, None, t_len, seed, rep as u64)?;
            times.push(start.elapsed().as_secs_f64());
        }
        Ok(median(times))
    };
    let time_posterior = |t_len: usize| -> Result<f64> {
        // observation values only shape the step offsets, not the cost
        let obs = Mat::from_fn(t_len, 1, 0.0, |t, _| (t as f64 * 0.3).sin());
        let spec = filtering_init(&model, &obs, PosteriorVariant::Vcdt, true)?;
        let mut times = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let start = Instant::now();
            sample_posterior(&model, &spec, None, seed, rep as u64)?;
            times.push(start.elapsed().as_secs_f64());
        }
        Ok(median(times))
    };

    // warm both paths once so allocation effects fall out of the medians
    sample_prior_trajectory(&model, None, base_t, seed, 1000)?;
    let report = TimingReport {
        base_t,
        long_t,
        prior_short: time_prior(base_t)?,
        prior_long: time_prior(long_t)?,
        posterior_short: time_posterior(base_t)?,
        posterior_long: time_posterior(long_t)?,
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_runs_and_reports_positive_times() {
        let report = timing_study(10, 2, 3, 5).unwrap();
        assert_eq!(report.base_t, 10);
        assert_eq!(report.long_t, 20);
        assert!(report.prior_short > 0.0);
        assert!(report.prior_long > 0.0);
        assert!(report.posterior_short > 0.0);
        assert!(report.posterior_ratio() > 0.0);
    }
}
