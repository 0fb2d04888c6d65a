//! One experiment end to end: resolve data, initialise a model, train,
//! and write artifacts into a content-addressed results directory.
//!
//! The directory name includes a hash of the canonical config
//! serialisation, so rerunning the same config overwrites its own
//! artifacts and two different configs never collide.

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::config::ExperimentConfig;
use crate::data::csv::{fmt_float, write_csv};
use crate::data::dataset::{ColumnStats, TimeSeriesDataset};
use crate::data::kink::generate_kink_dataset;
use crate::error::{Error, Result};
use crate::evaluation::{nlpp, rmse};
use crate::gp::{kernel_gram_psd, Kernel, MeanFunction, SparseGp};
use crate::inference::params::{flatten, make_layout, ModelStructure};
use crate::inference::{train, TrainOutcome};
use crate::linalg::{cholesky, GaussianDist, Mat};
use crate::model::{rollout_predict, EmissionModel, GpssmModel};
use crate::posterior::{filtering_init, sample_posterior, PosteriorSpec};
use crate::rng::{stream, Role};
use rand::RngCore;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const KINK_DEFAULT_T: usize = 120;
pub const KINK_DEFAULT_PROCESS_SD: f64 = 0.05;

pub fn kink_default_obs_sd() -> f64 {
    0.8f64.sqrt()
}

/// 64-bit FNV-1a.
pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Hash of the canonical serialisation; names the artifacts directory.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical =
        toml::to_string(config).map_err(|e| Error::Config(format!("unserialisable config: {e}")))?;
    Ok(format!("{:016x}", fnv64(canonical.as_bytes())))
}

/// `$GPSSM_RESULTS_DIR`, or `./results` when unset.
pub fn results_root() -> PathBuf {
    std::env::var_os("GPSSM_RESULTS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

#[derive(Debug)]
pub struct PreparedData {
    pub train: TimeSeriesDataset,
    pub holdout: Option<TimeSeriesDataset>,
    pub obs_stats: Option<ColumnStats>,
    pub control_stats: Option<ColumnStats>,
    /// Simulated latent states over the training window, when known.
    pub latent_truth: Option<Mat<f64>>,
}

/// Resolve the configured data source, split, and normalise.
///
/// Normalisation statistics come from the training rows only and are
/// applied unchanged to the holdout, so no information leaks backwards.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (raw, latent_truth) = match config.data.source.as_str() {
        "kink" => {
            let t = config.data.t_len.unwrap_or(KINK_DEFAULT_T);
            let process_sd = config.data.process_sd.unwrap_or(KINK_DEFAULT_PROCESS_SD);
            let obs_sd = config.data.obs_sd.unwrap_or_else(kink_default_obs_sd);
            let kink = generate_kink_dataset(t, process_sd, obs_sd, config.seed);
            let dataset = TimeSeriesDataset {
                observations: kink.observations,
                controls: None,
                observation_names: vec!["y".into()],
                control_names: vec![],
            };
            (dataset, Some(kink.states))
        }
        "csv" => {
            let path = config.data.path.as_ref().expect("validated");
            let mut dataset = TimeSeriesDataset::from_csv_columns(
                Path::new(path),
                &config.data.observation_columns,
                &config.data.control_columns,
            )?;
            if let Some(t) = config.data.t_len {
                if t < dataset.t_len() {
                    dataset = dataset.split(t)?.0;
                }
            }
            (dataset, None)
        }
        other => return Err(Error::Config(format!("unknown data source {other:?}"))),
    };

    let (train_raw, holdout_raw) = match config.data.train_fraction {
        None => (raw, None),
        Some(f) => {
            let t_total = raw.t_len();
            let t_train = ((t_total as f64 * f).round() as usize).clamp(2, t_total);
            if t_train == t_total {
                (raw, None)
            } else {
                let (a, b) = raw.split(t_train)?;
                (a, Some(b))
            }
        }
    };
    let latent_truth = latent_truth.map(|m| {
        Mat::from_fn(train_raw.t_len(), m.cols(), 0.0, |i, j| m.at(i, j))
    });

    if !config.data.normalise {
        return Ok(PreparedData {
            train: train_raw,
            holdout: holdout_raw,
            obs_stats: None,
            control_stats: None,
            latent_truth,
        });
    }
    let (train, obs_stats, control_stats) = train_raw.normalise()?;
    let holdout = holdout_raw.map(|h| TimeSeriesDataset {
        observations: obs_stats.apply(&h.observations),
        controls: match (&control_stats, &h.controls) {
            (Some(cs), Some(c)) => Some(cs.apply(c)),
            _ => None,
        },
        observation_names: h.observation_names,
        control_names: h.control_names,
    });
    Ok(PreparedData {
        train,
        holdout,
        obs_stats: Some(obs_stats),
        control_stats,
        // the simulated truth lives in raw space; drop it rather than mix scales
        latent_truth: None,
    })
}

fn column_range(m: &Mat<f64>, j: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m.rows() {
        lo = lo.min(m.at(i, j));
        hi = hi.max(m.at(i, j));
    }
    if !lo.is_finite() || !(hi - lo > 1e-6) {
        (-2.0, 2.0)
    } else {
        (lo, hi)
    }
}

/// Deterministic starting model: inducing inputs spread over the data
/// range, prior inducing distribution, unit-ish hyperparameters.
pub fn initial_model(config: &ExperimentConfig, data: &TimeSeriesDataset) -> Result<GpssmModel<f64>> {
    let d = config.model.latent_dim;
    let dc = data.control_dim();
    let din = d + dc;
    let m = config.model.n_inducing;
    let e = data.obs_dim();

    let mut z = Mat::zeros(m, din);
    for c in 0..din {
        let (lo, hi) = if c < d {
            column_range(&data.observations, c.min(e - 1))
        } else {
            column_range(data.controls.as_ref().expect("control dims imply controls"), c - d)
        };
        // golden-ratio phase per column keeps rows distinct in every axis
        let phase = 0.6180339887498949 * c as f64;
        for i in 0..m {
            let frac = ((i as f64 + 0.5) / m as f64 + phase).fract();
            z.set(i, c, lo + (hi - lo) * frac);
        }
    }

    let signal_sd = config.model.signal_sd_init.unwrap_or(1.0);
    let lengthscale = config.model.lengthscale_init.unwrap_or(1.0);
    let process_sd = config.model.process_sd_init.unwrap_or(0.3);
    let obs_sd = config.model.obs_sd_init.unwrap_or(0.5);
    let mean_name = config.model.mean_function.as_deref().unwrap_or("identity");

    let mut gps = Vec::with_capacity(d);
    for j in 0..d {
        let kernel = match config.model.kernel.as_str() {
            "squared-exponential" => Kernel::SquaredExponentialArd {
                signal_variance: signal_sd * signal_sd,
                lengthscales: vec![lengthscale; din],
            },
            "linear" => Kernel::Linear { weight_variances: vec![1.0; din] },
            other => return Err(Error::Config(format!("unknown kernel {other:?}"))),
        };
        let mean_fn = match mean_name {
            "zero" => MeanFunction::Zero,
            "identity" => MeanFunction::Identity { output_index: j },
            "kink" => MeanFunction::Kink,
            other => return Err(Error::Config(format!("unknown mean function {other:?}"))),
        };
        let sigma_u = kernel_gram_psd(&kernel, &z)?;
        // start the variational distribution at the prior: mean function at
        // z and the prior gram, so the inducing KL begins at zero
        let mu_u = (0..m).map(|i| mean_fn.eval(z.row(i))).collect();
        gps.push(SparseGp { kernel, mean_fn, z: z.clone(), mu_u, sigma_u });
    }

    let mut c_mat = Mat::zeros(e, d);
    for i in 0..e.min(d) {
        c_mat.set(i, i, 1.0);
    }
    Ok(GpssmModel {
        latent_dim: d,
        control_dim: dc,
        initial_state: GaussianDist { mean: vec![0.0; d], cov: cholesky(&Mat::identity(d))? },
        process_noise: vec![process_sd * process_sd; d],
        gps,
        emission: EmissionModel { c: c_mat, d: vec![0.0; e], r_diag: vec![obs_sd * obs_sd; e] },
    })
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_hash: String,
    pub outcome: TrainOutcome,
    pub structure: ModelStructure,
    pub wall_seconds: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(format!("writing {}: {}", path.display(), e)))
}

/// Rows for the posterior-fit artifact: smoothed state marginals from
/// posterior samples, the training observations, any latent truth, and
/// the learned transition over a grid when the input is one-dimensional.
pub fn fit_rows(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    data: &PreparedData,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let t_len = spec.t_len;
    let d = model.latent_dim;
    let n_samples = 100usize;
    let master = stream(seed, Role::RolloutStart, 1).next_u64();
    let controls = data.train.controls.as_ref();
    let mut sums = vec![vec![0.0; d]; t_len];
    let mut sq_sums = vec![vec![0.0; d]; t_len];
    for i in 0..n_samples {
        let s = sample_posterior(model, spec, controls, master, i as u64)?;
        for t in 0..t_len {
            for j in 0..d {
                let v = s.states.at(t, j);
                sums[t][j] += v;
                sq_sums[t][j] += v * v;
            }
        }
    }
    let n = n_samples as f64;
    let mut rows = Vec::new();
    let cell = |kind: &str, t: usize, dim: usize, value: f64| {
        vec![kind.to_string(), t.to_string(), dim.to_string(), fmt_float(value)]
    };
    let mut state_lo = f64::INFINITY;
    let mut state_hi = f64::NEG_INFINITY;
    for t in 0..t_len {
        for j in 0..d {
            let mean = sums[t][j] / n;
            let var = (sq_sums[t][j] / n - mean * mean).max(0.0);
            rows.push(cell("state-mean", t, j, mean));
            rows.push(cell("state-sd", t, j, var.sqrt()));
            state_lo = state_lo.min(mean);
            state_hi = state_hi.max(mean);
        }
    }
    for t in 0..data.train.t_len() {
        for k in 0..data.train.obs_dim() {
            rows.push(cell("observation", t, k, data.train.observations.at(t, k)));
        }
    }
    if let Some(truth) = &data.latent_truth {
        for t in 0..truth.rows() {
            for j in 0..truth.cols() {
                rows.push(cell("latent-truth", t, j, truth.at(t, j)));
            }
        }
    }
    // learned transition over a grid, for one-dimensional inputs
    if d == 1 && model.control_dim == 0 {
        let caches = model.gp_caches()?;
        let lo = state_lo - 0.5;
        let hi = state_hi + 0.5;
        let n_grid = 200;
        for g in 0..n_grid {
            let x = lo + (hi - lo) * g as f64 / (n_grid - 1) as f64;
            let cond = model.gps[0].conditional(&caches[0], &[x])?;
            rows.push(cell("function-input", g, 0, x));
            rows.push(cell("function-mean", g, 0, cond.posterior_mean));
            rows.push(cell("function-sd", g, 0, cond.marg_var.max(0.0).sqrt()));
        }
    }
    Ok(rows)
}

/// Rows for the predictions artifact: rollout moments past the training
/// window, plus per-step scores against the holdout when one exists.
pub fn prediction_rows(
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
    data: &PreparedData,
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let d = model.latent_dim;
    let t_train = spec.t_len;
    let master = stream(seed, Role::RolloutStart, 2).next_u64();

    // start distribution: moments of the posterior over the final state
    let n_fit = 100usize;
    let fit_master = stream(seed, Role::RolloutStart, 1).next_u64();
    let mut last = Vec::with_capacity(n_fit);
    for i in 0..n_fit {
        let s = sample_posterior(model, spec, data.train.controls.as_ref(), fit_master, i as u64)?;
        last.push(s.states.row(t_train - 1).to_vec());
    }
    let n = n_fit as f64;
    let mean: Vec<f64> = (0..d).map(|j| last.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let mut cov = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let c: f64 = last.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>()
                / (n - 1.0);
            cov.set(i, j, c + if i == j { 1e-8 } else { 0.0 });
        }
    }
    let start = GaussianDist { mean, cov: cholesky(&cov)? };

    let future_controls: Option<Mat<f64>> = match (&data.holdout, model.control_dim) {
        (_, 0) => None,
        (Some(h), _) => {
            let c = h.controls.as_ref().ok_or_else(|| {
                Error::Config("prediction with controls needs holdout control rows".into())
            })?;
            if c.rows() < horizon {
                return Err(Error::DimensionMismatch { expected: horizon, got: c.rows(), context: "future control rows" });
            }
            Some(Mat::from_fn(horizon, c.cols(), 0.0, |i, j| c.at(i, j)))
        }
        (None, _) => {
            return Err(Error::Config("prediction with controls needs a holdout split".into()))
        }
    };
    let rollout = rollout_predict(model, &start, future_controls.as_ref(), horizon, n_samples, master)?;

    let e = model.emission.obs_dim();
    let n_mc = rollout.emission_means.len() as f64;
    let mut rows = Vec::new();
    let cell = |kind: &str, t: usize, dim: usize, value: f64| {
        vec![kind.to_string(), t.to_string(), dim.to_string(), fmt_float(value)]
    };
    for h in 0..horizon {
        for k in 0..e {
            let mean: f64 =
                rollout.emission_means.iter().map(|m| m.at(h, k)).sum::<f64>() / n_mc;
            let var: f64 = rollout
                .emission_means
                .iter()
                .map(|m| (m.at(h, k) - mean).powi(2))
                .sum::<f64>()
                / (n_mc - 1.0).max(1.0);
            rows.push(cell("pred-mean", t_train + h, k, mean));
            rows.push(cell("pred-sd", t_train + h, k, var.sqrt()));
        }
    }
    if let Some(holdout) = &data.holdout {
        let h_eval = horizon.min(holdout.t_len());
        if h_eval > 0 {
            let truth = Mat::from_fn(h_eval, e, 0.0, |i, j| holdout.observations.at(i, j));
            let preds: Vec<Mat<f64>> = rollout
                .emission_means
                .iter()
                .map(|m| Mat::from_fn(h_eval, e, 0.0, |i, j| m.at(i, j)))
                .collect();
            let nl = nlpp(&preds, &truth, &model.emission.r_diag)?;
            let rm = rmse(&preds, &truth)?;
            for h in 0..h_eval {
                rows.push(cell("nlpp", t_train + h, 0, nl[h]));
                rows.push(cell("rmse", t_train + h, 0, rm[h]));
            }
        }
    }
    Ok(rows)
}

/// Train per the config and write every artifact. Returns the artifact
/// directory along with the outcome for callers that keep going.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let data = prepare_data(config)?;
    let model0 = initial_model(config, &data.train)?;
    let variant = config.posterior.to_variant()?;
    let spec0 = filtering_init(
        &model0,
        &data.train.observations,
        variant,
        config.posterior.tie_across_time,
    )?;
    let structure = ModelStructure::infer(&model0, &spec0)?;
    let layout = make_layout(&structure);
    let mut theta0 = flatten(&structure, &layout, &model0, &spec0)?;
    if let Some(warm) = &config.training.warm_start {
        let checkpoint = load_checkpoint(Path::new(warm))?;
        let (theta, _skipped) = checkpoint.warm_start(&structure, &theta0)?;
        theta0 = theta;
    }
    let train_config = config.training.to_train_config(config.seed)?;

    let started = Instant::now();
    let outcome = train(
        &structure,
        theta0,
        &data.train.observations,
        data.train.controls.as_ref(),
        &train_config,
    )?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let hash = config_hash(config)?;
    let dir = results_root().join(format!("{}-{}", config.name, hash));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io(format!("creating {}: {}", dir.display(), e)))?;

    let canonical = toml::to_string(config).map_err(|e| Error::Config(format!("{e}")))?;
    write_text(&dir.join("config.toml"), &canonical)?;

    let trace_rows: Vec<Vec<String>> = outcome
        .trace
        .iter()
        .map(|r| {
            vec![
                r.iteration.to_string(),
                fmt_float(r.elbo),
                fmt_float(r.expected_log_lik),
                fmt_float(r.kl_u),
                fmt_float(r.kl_x1),
                fmt_float(r.expected_transition_kl),
                fmt_float(r.wall_ms),
            ]
        })
        .collect();
    write_csv(
        &dir.join("trace.csv"),
        &["iteration", "elbo", "expected_log_lik", "kl_u", "kl_x1", "expected_transition_kl", "wall_ms"],
        &trace_rows,
    )?;

    let checkpoint = Checkpoint::from_theta(&structure, &layout, &outcome.theta)?;
    save_checkpoint(&dir.join("checkpoint.json"), &checkpoint)?;

    let fit = fit_rows(&outcome.model, &outcome.spec, &data, config.seed)?;
    write_csv(&dir.join("posterior_fit.csv"), &["kind", "t", "dim", "value"], &fit)?;

    if let Some(pred) = &config.prediction {
        let rows = prediction_rows(
            &outcome.model,
            &outcome.spec,
            &data,
            pred.horizon,
            pred.samples,
            config.seed,
        )?;
        write_csv(&dir.join("predictions.csv"), &["kind", "t", "dim", "value"], &rows)?;
    }

    let last = outcome.trace.last();
    let metric = |f: fn(&crate::inference::TraceRow) -> f64| -> String {
        last.map(|r| fmt_float(f(r))).unwrap_or_else(|| "NaN".into())
    };
    let metrics_row = vec![
        metric(|r| r.elbo),
        metric(|r| r.expected_log_lik),
        metric(|r| r.kl_u),
        metric(|r| r.kl_x1),
        metric(|r| r.expected_transition_kl),
        outcome.iterations_run.to_string(),
        if outcome.aborted.is_some() { "1".into() } else { "0".into() },
        fmt_float(wall_seconds),
    ];
    write_csv(
        &dir.join("metrics.csv"),
        &["final_elbo", "expected_log_lik", "kl_u", "kl_x1", "expected_transition_kl", "iterations_run", "aborted", "wall_seconds"],
        &[metrics_row],
    )?;

    let status = match &outcome.aborted {
        None => serde_json::json!({ "status": "ok" }),
        Some(message) => serde_json::json!({ "status": "aborted", "message": message }),
    };
    write_text(
        &dir.join("status.json"),
        &serde_json::to_string_pretty(&status).expect("status serialises"),
    )?;

    Ok(RunArtifacts { dir, config_hash: hash, outcome, structure, wall_seconds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::config::parse_config;

    #[test]
    fn fnv64_matches_reference_vectors() {
        assert_eq!(fnv64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv64(b"foobar"), 0x85944171f73967e8);
    }

    const BASE: &str = r#"
name = "unit"
seed = 3

[data]
source = "kink"
t_len = 24
normalise = false

[model]
latent_dim = 1
n_inducing = 4

[posterior]
variant = "vcdt"

[training]
iterations = 2
mc_samples = 2
"#;

    #[test]
    fn config_hash_is_stable_and_separates_configs() {
        let a = parse_config(BASE).unwrap();
        let b = parse_config(BASE).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c = parse_config(&BASE.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 16);
    }

    #[test]
    fn prepared_kink_data_matches_the_generator() {
        let config = parse_config(BASE).unwrap();
        let data = prepare_data(&config).unwrap();
        let direct = generate_kink_dataset(24, KINK_DEFAULT_PROCESS_SD, kink_default_obs_sd(), 3);
        assert_eq!(data.train.observations.data(), direct.observations.data());
        assert_eq!(data.latent_truth.as_ref().unwrap().data(), direct.states.data());
        assert!(data.holdout.is_none());
    }

    #[test]
    fn train_fraction_splits_before_normalisation() {
        let text = BASE
            .replace("normalise = false", "normalise = true\ntrain_fraction = 0.75");
        let config = parse_config(&text).unwrap();
        let data = prepare_data(&config).unwrap();
        assert_eq!(data.train.t_len(), 18);
        assert_eq!(data.holdout.as_ref().unwrap().t_len(), 6);
        // training columns are standardised, holdout shares the same map
        let stats = data.obs_stats.as_ref().unwrap();
        let mean: f64 =
            (0..18).map(|t| data.train.observations.at(t, 0)).sum::<f64>() / 18.0;
        assert!(mean.abs() < 1e-10);
        assert!(stats.sds[0] > 0.0);
    }

    #[test]
    fn initial_model_covers_the_data_range() {
        let config = parse_config(BASE).unwrap();
        let data = prepare_data(&config).unwrap();
        let model = initial_model(&config, &data.train).unwrap();
        model.validate().unwrap();
        let (lo, hi) = column_range(&data.train.observations, 0);
        let z = &model.gps[0].z;
        for i in 0..z.rows() {
            assert!(z.at(i, 0) >= lo && z.at(i, 0) <= hi);
        }
        assert_eq!(model.process_noise[0], 0.09);
    }
}
