//! Metrics for judging predictions and posterior quality.
//!
//! Predictions arrive as an ensemble: one emission-mean matrix per Monte
//! Carlo rollout. Scoring treats the ensemble as an equally weighted
//! mixture and adds the observation noise back in, so the numbers refer
//! to actual future observations rather than noise-free means.

pub mod kalman;
pub mod timing;

use crate::error::{Error, Result};
use crate::linalg::{normal_logpdf, Mat};
use crate::model::GpssmModel;
use crate::posterior::{sample_posterior, PosteriorSpec};

/// Smallest admissible observation-noise variance when scoring.
const MIN_R: f64 = 1e-12;

fn check_ensemble(predictions: &[Mat<f64>], truth: &Mat<f64>) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Config("empty prediction ensemble".into()));
    }
    for p in predictions {
        if p.rows() != truth.rows() {
            return Err(Error::DimensionMismatch { expected: truth.rows(), got: p.rows(), context: "prediction rows" });
        }
        if p.cols() != truth.cols() {
            return Err(Error::DimensionMismatch { expected: truth.cols(), got: p.cols(), context: "prediction columns" });
        }
    }
    Ok(())
}

/// Per-step negative log predictive probability of the true observations
/// under the equally weighted mixture `1/S sum_s N(y; pred_s, diag r)`.
pub fn nlpp(predictions: &[Mat<f64>], truth: &Mat<f64>, r: &[f64]) -> Result<Vec<f64>> {
    check_ensemble(predictions, truth)?;
    let e = truth.cols();
    if r.len() != e {
        return Err(Error::DimensionMismatch { expected: e, got: r.len(), context: "observation noise" });
    }
    for (i, &v) in r.iter().enumerate() {
        if !(v >= MIN_R) {
            return Err(Error::DegenerateR { index: i, value: v });
        }
    }
    let n = predictions.len() as f64;
    let mut out = Vec::with_capacity(truth.rows());
    for t in 0..truth.rows() {
        let y = truth.row(t);
        // log-sum-exp over the ensemble of per-sample joint log densities
        let logs: Vec<f64> = predictions
            .iter()
            .map(|p| {
                let m = p.row(t);
                (0..e).map(|i| normal_logpdf(y[i], m[i], r[i])).sum::<f64>()
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        out.push(-(lse - n.ln()));
    }
    Ok(out)
}

/// Per-step root mean squared error of the ensemble mean.
pub fn rmse(predictions: &[Mat<f64>], truth: &Mat<f64>) -> Result<Vec<f64>> {
    check_ensemble(predictions, truth)?;
    let n = predictions.len() as f64;
    let e = truth.cols();
    let mut out = Vec::with_capacity(truth.rows());
    for t in 0..truth.rows() {
        let mut sq = 0.0;
        for i in 0..e {
            let mean: f64 = predictions.iter().map(|p| p.at(t, i)).sum::<f64>() / n;
            let d = mean - truth.at(t, i);
            sq += d * d;
        }
        out.push((sq / e as f64).sqrt());
    }
    Ok(out)
}

/// How well the predictive spread matches the realised errors.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    /// One standardised residual per (step, output) pair, flattened.
    pub z_scores: Vec<f64>,
    /// Fraction of |z| within 1, 2, and 3.
    pub coverage: [f64; 3],
}

/// Standardise the truth against the ensemble mean and the total
/// predictive variance (ensemble variance plus observation noise).
pub fn calibration_report(
    predictions: &[Mat<f64>],
    truth: &Mat<f64>,
    r: &[f64],
) -> Result<CalibrationReport> {
    check_ensemble(predictions, truth)?;
    if predictions.len() < 2 {
        return Err(Error::Config("calibration needs at least two ensemble members".into()));
    }
    let n = predictions.len() as f64;
    let e = truth.cols();
    let mut z_scores = Vec::with_capacity(truth.rows() * e);
    for t in 0..truth.rows() {
        for i in 0..e {
            let mean: f64 = predictions.iter().map(|p| p.at(t, i)).sum::<f64>() / n;
            let var: f64 = predictions.iter().map(|p| (p.at(t, i) - mean).powi(2)).sum::<f64>()
                / (n - 1.0)
                + r[i];
            z_scores.push((truth.at(t, i) - mean) / var.sqrt());
        }
    }
    let frac = |bound: f64| {
        z_scores.iter().filter(|z| z.abs() <= bound).count() as f64 / z_scores.len() as f64
    };
    Ok(CalibrationReport { z_scores: z_scores.clone(), coverage: [frac(1.0), frac(2.0), frac(3.0)] })
}

/// Error function via the Abramowitz-Stegun rational approximation
/// (maximum absolute error about 1.5e-7).
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov-Smirnov test outcome at significance level 0.01.
#[derive(Debug, Clone, Copy)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub rejected: bool,
}

/// The 1% critical coefficient `c(alpha) = sqrt(-ln(alpha / 2) / 2)`.
const KS_COEFF_1PCT: f64 = 1.6276236115189503;

/// Two-sample Kolmogorov-Smirnov test at the 1% level.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("empty sample in two-sample test".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let (n, m) = (sa.len(), sb.len());
    let mut i = 0;
    let mut j = 0;
    let mut stat: f64 = 0.0;
    while i < n && j < m {
        let v = sa[i].min(sb[j]);
        while i < n && sa[i] <= v {
            i += 1;
        }
        while j < m && sb[j] <= v {
            j += 1;
        }
        stat = stat.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = KS_COEFF_1PCT * (((n + m) as f64) / ((n * m) as f64)).sqrt();
    Ok(KsResult { statistic: stat, critical, rejected: stat > critical })
}

/// One-sample Kolmogorov-Smirnov test against `N(mean, sd^2)` at the 1% level.
pub fn ks_one_sample_normal(xs: &[f64], mean: f64, sd: f64) -> Result<KsResult> {
    if xs.is_empty() {
        return Err(Error::Config("empty sample in one-sample test".into()));
    }
    let mut s = xs.to_vec();
    s.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let n = s.len();
    let mut stat: f64 = 0.0;
    for (k, &x) in s.iter().enumerate() {
        let cdf = standard_normal_cdf((x - mean) / sd);
        let hi = (k + 1) as f64 / n as f64 - cdf;
        let lo = cdf - k as f64 / n as f64;
        stat = stat.max(hi.max(lo));
    }
    let critical = KS_COEFF_1PCT / (n as f64).sqrt();
    Ok(KsResult { statistic: stat, critical, rejected: stat > critical })
}

/// Per-step distribution comparison between two posterior samplers.
#[derive(Debug, Clone)]
pub struct MarginalComparison {
    /// Row `t - 1` holds the per-dimension tests for the state at step `t`
    /// (the first state is skipped; both samplers share it).
    pub per_step: Vec<Vec<KsResult>>,
    pub n_rejections: usize,
}

/// Sample both posteriors and compare the state marginals at every step
/// with two-sample tests. Used to expose samplers whose per-step
/// function draws are independent when they should be correlated.
pub fn compare_state_marginals(
    model: &GpssmModel<f64>,
    left: &PosteriorSpec<f64>,
    right: &PosteriorSpec<f64>,
    controls: Option<&Mat<f64>>,
    n_trajectories: usize,
    seed: u64,
) -> Result<MarginalComparison> {
    if left.t_len != right.t_len {
        return Err(Error::DimensionMismatch { expected: left.t_len, got: right.t_len, context: "trajectory length" });
    }
    let t_len = left.t_len;
    let d = model.latent_dim;
    let draw = |spec: &PosteriorSpec<f64>, master: u64| -> Result<Vec<Mat<f64>>> {
        (0..n_trajectories)
            .map(|i| Ok(sample_posterior(model, spec, controls, master, i as u64)?.states))
            .collect()
    };
    let a = draw(left, seed)?;
    let b = draw(right, seed.wrapping_add(0x9E3779B97F4A7C15))?;
    let mut per_step = Vec::with_capacity(t_len.saturating_sub(1));
    let mut n_rejections = 0;
    for t in 1..t_len {
        let mut row = Vec::with_capacity(d);
        for dim in 0..d {
            let xa: Vec<f64> = a.iter().map(|s| s.at(t, dim)).collect();
            let xb: Vec<f64> = b.iter().map(|s| s.at(t, dim)).collect();
            let ks = ks_two_sample(&xa, &xb)?;
            if ks.rejected {
                n_rejections += 1;
            }
            row.push(ks);
        }
        per_step.push(row);
    }
    Ok(MarginalComparison { per_step, n_rejections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Role};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn nlpp_of_perfect_point_prediction_is_the_gaussian_entropy_term() {
        // every member exactly at the truth, unit noise: 0.5 ln(2 pi)
        let truth = Mat::from_vec(3, 1, vec![0.4, -1.0, 2.0]);
        let preds = vec![truth.clone(), truth.clone()];
        let scores = nlpp(&preds, &truth, &[1.0]).unwrap();
        for s in scores {
            assert_abs_diff_eq!(s, 0.9189385332046727, epsilon = 1e-12);
        }
    }

    #[test]
    fn nlpp_matches_hand_rolled_two_component_mixture() {
        let truth = Mat::from_vec(1, 1, vec![0.0]);
        let preds = vec![Mat::from_vec(1, 1, vec![1.0]), Mat::from_vec(1, 1, vec![-2.0])];
        let r = 0.5;
        let scores = nlpp(&preds, &truth, &[r]).unwrap();
        let expect = -((0.5 * normal_logpdf(0.0, 1.0, r).exp()
            + 0.5 * normal_logpdf(0.0, -2.0, r).exp())
        .ln());
        assert_abs_diff_eq!(scores[0], expect, epsilon = 1e-12);
    }

    #[test]
    fn nlpp_rejects_degenerate_noise() {
        let truth = Mat::from_vec(1, 1, vec![0.0]);
        let preds = vec![truth.clone()];
        assert!(matches!(
            nlpp(&preds, &truth, &[0.0]),
            Err(Error::DegenerateR { index: 0, .. })
        ));
    }

    #[test]
    fn rmse_of_ensemble_mean_is_exact() {
        let truth = Mat::from_vec(2, 2, vec![0.0, 0.0, 1.0, 1.0]);
        let preds = vec![
            Mat::from_vec(2, 2, vec![1.0, 0.0, 1.0, 1.0]),
            Mat::from_vec(2, 2, vec![-1.0, 0.0, 1.0, 1.0]),
        ];
        let out = rmse(&preds, &truth).unwrap();
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.0, epsilon = 1e-12);
        let preds = vec![Mat::from_vec(2, 2, vec![3.0, 0.0, 1.0, 5.0])];
        let out = rmse(&preds, &truth).unwrap();
        assert_abs_diff_eq!(out[0], (9.0f64 / 2.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], (16.0f64 / 2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn erf_matches_reference_values() {
        // the rational approximation is only good to 1.5e-7, even at 0
        assert_abs_diff_eq!(erf(0.0), 0.0, epsilon = 2e-7);
        assert_abs_diff_eq!(erf(1.0), 0.8427007929497149, epsilon = 2e-7);
        assert_abs_diff_eq!(erf(2.0), 0.9953222650189527, epsilon = 2e-7);
        assert_abs_diff_eq!(erf(-1.0), -erf(1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(standard_normal_cdf(0.0), 0.5, epsilon = 2e-7);
        assert_abs_diff_eq!(standard_normal_cdf(1.96), 0.975, epsilon = 1e-4);
    }

    fn normal_draws(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        let mut rng = stream(seed, Role::Shuffle, 0);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                mean + sd * z
            })
            .collect()
    }

    #[test]
    fn two_sample_test_accepts_equal_and_rejects_shifted() {
        let a = normal_draws(1, 800, 0.0, 1.0);
        let b = normal_draws(2, 700, 0.0, 1.0);
        let same = ks_two_sample(&a, &b).unwrap();
        assert!(!same.rejected, "statistic {} critical {}", same.statistic, same.critical);
        let c = normal_draws(3, 700, 0.6, 1.0);
        let diff = ks_two_sample(&a, &c).unwrap();
        assert!(diff.rejected, "statistic {} critical {}", diff.statistic, diff.critical);
    }

    #[test]
    fn one_sample_test_accepts_matching_and_rejects_wrong_reference() {
        let xs = normal_draws(4, 1000, 0.3, 2.0);
        let good = ks_one_sample_normal(&xs, 0.3, 2.0).unwrap();
        assert!(!good.rejected, "statistic {} critical {}", good.statistic, good.critical);
        let bad = ks_one_sample_normal(&xs, 0.0, 2.0).unwrap();
        assert!(bad.rejected, "statistic {} critical {}", bad.statistic, bad.critical);
    }

    #[test]
    fn marginal_comparison_accepts_a_sampler_against_itself() {
        use crate::gp::{kernel_gram_psd, Kernel, MeanFunction, SparseGp};
        use crate::linalg::{cholesky, GaussianDist};
        use crate::model::EmissionModel;
        use crate::posterior::{filtering_init, PosteriorVariant};

        let kernel = Kernel::SquaredExponentialArd { signal_variance: 0.8, lengthscales: vec![1.0] };
        let z = Mat::from_vec(3, 1, vec![-1.0, 0.0, 1.0]);
        let kzz = kernel_gram_psd(&kernel, &z).unwrap();
        let model = GpssmModel {
            latent_dim: 1,
            control_dim: 0,
            initial_state: GaussianDist { mean: vec![0.0], cov: cholesky(&Mat::identity(1)).unwrap() },
            process_noise: vec![0.1],
            gps: vec![SparseGp { kernel, mean_fn: MeanFunction::Zero, z, mu_u: vec![0.5, -0.2, 0.4], sigma_u: kzz }],
            emission: EmissionModel { c: Mat::identity(1), d: vec![0.0], r_diag: vec![0.3] },
        };
        let obs = Mat::from_vec(5, 1, vec![0.1, 0.4, -0.2, 0.3, 0.0]);
        let spec = filtering_init(&model, &obs, PosteriorVariant::Vcdt, true).unwrap();
        let cmp = compare_state_marginals(&model, &spec, &spec, None, 300, 17).unwrap();
        assert_eq!(cmp.per_step.len(), 4);
        assert_eq!(cmp.n_rejections, 0, "sampler differs from itself");
    }

    #[test]
    fn calibration_covers_nominal_rates_for_well_specified_ensemble() {
        // ensemble from N(0, 1), truth from N(0, 1 + r): z should be
        // close to standard normal
        let mut rng = stream(9, Role::Shuffle, 1);
        let t_len = 400;
        let n_ens = 64;
        let r: f64 = 0.25;
        let preds: Vec<Mat<f64>> = (0..n_ens)
            .map(|_| {
                Mat::from_vec(
                    t_len,
                    1,
                    (0..t_len).map(|_| StandardNormal.sample(&mut rng)).collect(),
                )
            })
            .collect();
        let truth = Mat::from_vec(
            t_len,
            1,
            (0..t_len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * (1.0 + r).sqrt()
                })
                .collect(),
        );
        let report = calibration_report(&preds, &truth, &[r]).unwrap();
        assert!((report.coverage[0] - 0.683).abs() < 0.06, "{:?}", report.coverage);
        assert!((report.coverage[1] - 0.954).abs() < 0.03, "{:?}", report.coverage);
        assert!(report.coverage[2] > 0.98, "{:?}", report.coverage);
        let mean_z: f64 = report.z_scores.iter().sum::<f64>() / report.z_scores.len() as f64;
        assert!(mean_z.abs() < 0.1);
    }
}
