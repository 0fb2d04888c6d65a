//! Command-line front end for GP state-space model experiments.
//!
//! Exit codes: 0 on success, 2 for configuration or input problems,
//! 3 for numerical failures (including aborted training runs).

use clap::{Parser, Subcommand};
use gpssm::checkpoint::load_checkpoint;
use gpssm::data::config::load_config;
use gpssm::data::csv::{fmt_float, read_csv, write_csv};
use gpssm::data::experiment::{
    kink_default_obs_sd, prediction_rows, prepare_data, run_experiment, KINK_DEFAULT_PROCESS_SD,
    KINK_DEFAULT_T,
};
use gpssm::data::kink::{generate_kink_dataset, kink_function};
use gpssm::error::Error;
use gpssm::evaluation::timing::timing_study;
use gpssm::evaluation::compare_state_marginals;
use gpssm::gp::{kernel_gram_psd, Kernel, MeanFunction, SparseGp};
use gpssm::inference::params::build;
use gpssm::linalg::{cholesky, GaussianDist, Mat};
use gpssm::model::{EmissionModel, GpssmModel};
use gpssm::posterior::{PosteriorSpec, PosteriorVariant};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "gpssm", version, about = "Experiments for GP state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the bent-line benchmark and write it as CSV.
    GenerateKink {
        #[arg(long, default_value_t = KINK_DEFAULT_T)]
        t_len: usize,
        #[arg(long, default_value_t = KINK_DEFAULT_PROCESS_SD)]
        process_sd: f64,
        /// Observation noise sd; defaults to the benchmark's sqrt(0.8).
        #[arg(long)]
        obs_sd: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the latent state as a column named x0.
        #[arg(long)]
        with_latent: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model per a TOML config and write an artifact directory.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Roll predictions forward from a saved checkpoint.
    Predict {
        /// The config that produced the checkpoint; supplies the data.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predictions file against a truth table.
    Evaluate {
        /// Long-format predictions (kind,t,dim,value) with pred-mean/pred-sd rows.
        #[arg(long)]
        predictions: PathBuf,
        /// Wide numeric CSV; row index is the absolute time step.
        #[arg(long)]
        truth: PathBuf,
        /// Observation noise sd added to the predictive variance.
        #[arg(long)]
        obs_sd: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare corrected trajectory sampling against independent per-step
    /// function draws, step by step.
    BiasStudy {
        #[arg(long, default_value_t = 12)]
        t_len: usize,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure how sampling cost scales with trajectory length.
    TimingStudy {
        #[arg(long, default_value_t = 25)]
        base_t: usize,
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[arg(long, default_value_t = 6)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::SchemaMismatch { .. }
        | Error::Io(_)
        | Error::DimensionMismatch { .. }
        | Error::DegenerateColumn { .. }
        | Error::DegenerateR { .. } => 2,
        Error::NotFactorizable { .. }
        | Error::AsymmetricInput { .. }
        | Error::NegativeVariance { .. }
        | Error::NonFinite { .. }
        | Error::NumericalAbort { .. } => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn run(command: Command) -> Result<i32, Error> {
    match command {
        Command::GenerateKink { t_len, process_sd, obs_sd, seed, with_latent, out } => {
            let obs_sd = obs_sd.unwrap_or_else(kink_default_obs_sd);
            let data = generate_kink_dataset(t_len, process_sd, obs_sd, seed);
            let mut header = vec!["y0"];
            if with_latent {
                header.push("x0");
            }
            let rows: Vec<Vec<String>> = (0..t_len)
                .map(|t| {
                    let mut row = vec![fmt_float(data.observations.at(t, 0))];
                    if with_latent {
                        row.push(fmt_float(data.states.at(t, 0)));
                    }
                    row
                })
                .collect();
            write_csv(&out, &header, &rows)?;
            println!("wrote {} rows to {}", t_len, out.display());
            Ok(0)
        }
        Command::Fit { config } => {
            let config = load_config(&config)?;
            let run = run_experiment(&config)?;
            println!("artifacts: {}", run.dir.display());
            if let Some(last) = run.outcome.trace.last() {
                println!("final elbo: {:.6} after {} iterations", last.elbo, run.outcome.iterations_run);
            }
            match &run.outcome.aborted {
                None => Ok(0),
                Some(message) => {
                    eprintln!("training aborted: {message}");
                    Ok(3)
                }
            }
        }
        Command::Predict { config, checkpoint, horizon, samples, out } => {
            let config = load_config(&config)?;
            config.validate()?;
            let data = prepare_data(&config)?;
            let checkpoint = load_checkpoint(&checkpoint)?;
            let (layout, theta) = checkpoint.to_theta()?;
            let (model, spec) = build::<f64>(&checkpoint.structure, &layout, &theta)?;
            if spec.t_len != data.train.t_len() {
                return Err(Error::Config(format!(
                    "checkpoint was fitted to {} training steps but the config prepares {}",
                    spec.t_len,
                    data.train.t_len()
                )));
            }
            let rows = prediction_rows(&model, &spec, &data, horizon, samples, config.seed)?;
            write_csv(&out, &["kind", "t", "dim", "value"], &rows)?;
            println!("wrote predictions for {horizon} steps to {}", out.display());
            Ok(0)
        }
        Command::Evaluate { predictions, truth, obs_sd, out } => evaluate(&predictions, &truth, obs_sd, out.as_deref()),
        Command::BiasStudy { t_len, trajectories, seed, out } => {
            bias_study(t_len, trajectories, seed, out.as_deref())
        }
        Command::TimingStudy { base_t, factor, repeats, seed, out } => {
            let report = timing_study(base_t, factor, repeats, seed)?;
            println!(
                "exact prior sampling:   T={:<4} {:.6}s   T={:<4} {:.6}s   ratio {:.2}",
                report.base_t,
                report.prior_short,
                report.long_t,
                report.prior_long,
                report.prior_ratio()
            );
            println!(
                "posterior sampling:     T={:<4} {:.6}s   T={:<4} {:.6}s   ratio {:.2}",
                report.base_t,
                report.posterior_short,
                report.long_t,
                report.posterior_long,
                report.posterior_ratio()
            );
            if let Some(path) = out {
                let rows = vec![
                    vec!["prior".into(), report.base_t.to_string(), fmt_float(report.prior_short)],
                    vec!["prior".into(), report.long_t.to_string(), fmt_float(report.prior_long)],
                    vec!["posterior".into(), report.base_t.to_string(), fmt_float(report.posterior_short)],
                    vec!["posterior".into(), report.long_t.to_string(), fmt_float(report.posterior_long)],
                ];
                write_csv(&path, &["kind", "t_len", "median_seconds"], &rows)?;
            }
            Ok(0)
        }
    }
}

/// Parses the long-format artifact CSV into (kind, t, dim, value) records.
fn read_long_csv(path: &Path) -> Result<Vec<(String, usize, usize, f64)>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("reading {}: {}", path.display(), e)))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::SchemaMismatch { message: "empty predictions file".into() })?;
    if header.trim_end_matches('\r') != "kind,t,dim,value" {
        return Err(Error::SchemaMismatch {
            message: format!("expected header kind,t,dim,value, found {header:?}"),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse { line: idx + 1, message: format!("expected 4 fields, found {}", fields.len()) });
        }
        let t: usize = fields[1]
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, message: format!("bad time index {:?}", fields[1]) })?;
        let dim: usize = fields[2]
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, message: format!("bad dim index {:?}", fields[2]) })?;
        let value: f64 = fields[3]
            .parse()
            .map_err(|_| Error::Parse { line: idx + 1, message: format!("bad value {:?}", fields[3]) })?;
        records.push((fields[0].to_string(), t, dim, value));
    }
    Ok(records)
}

fn evaluate(predictions: &Path, truth: &Path, obs_sd: f64, out: Option<&Path>) -> Result<i32, Error> {
    if !(obs_sd * obs_sd >= 1e-12) {
        return Err(Error::DegenerateR { index: 0, value: obs_sd * obs_sd });
    }
    let records = read_long_csv(predictions)?;
    let (_names, truth_rows) = read_csv(truth)?;

    use std::collections::BTreeMap;
    let mut means: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut sds: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (kind, t, dim, value) in &records {
        match kind.as_str() {
            "pred-mean" => {
                means.insert((*t, *dim), *value);
            }
            "pred-sd" => {
                sds.insert((*t, *dim), *value);
            }
            _ => {}
        }
    }
    if means.is_empty() {
        return Err(Error::SchemaMismatch { message: "no pred-mean rows in predictions file".into() });
    }

    let steps: Vec<usize> = {
        let mut ts: Vec<usize> = means.keys().map(|(t, _)| *t).collect();
        ts.dedup();
        ts
    };
    let e = means.keys().map(|(_, d)| *d + 1).max().unwrap_or(1);

    let mut rows = Vec::new();
    let mut sum_nlpp = 0.0;
    let mut sum_rmse = 0.0;
    let mut inside = [0usize; 3];
    let mut z_count = 0usize;
    let mut scored = 0usize;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for &t in &steps {
        if t >= truth_rows.len() {
            continue;
        }
        let mut nlpp_t = 0.0;
        let mut sq_t = 0.0;
        for dim in 0..e {
            let mean = *means.get(&(t, dim)).ok_or_else(|| Error::SchemaMismatch {
                message: format!("missing pred-mean at t={t} dim={dim}"),
            })?;
            let sd = *sds.get(&(t, dim)).ok_or_else(|| Error::SchemaMismatch {
                message: format!("missing pred-sd at t={t} dim={dim}"),
            })?;
            let y = *truth_rows[t].get(dim).ok_or_else(|| Error::DimensionMismatch {
                expected: e,
                got: truth_rows[t].len(),
                context: "truth columns",
            })?;
            let var = sd * sd + obs_sd * obs_sd;
            let diff = y - mean;
            nlpp_t += half_log_2pi + 0.5 * var.ln() + 0.5 * diff * diff / var;
            sq_t += diff * diff;
            let z = diff.abs() / var.sqrt();
            for (k, bound) in [1.0, 2.0, 3.0].iter().enumerate() {
                if z < *bound {
                    inside[k] += 1;
                }
            }
            z_count += 1;
        }
        let rmse_t = (sq_t / e as f64).sqrt();
        println!("t={t:<5} gaussian-nlpp={nlpp_t:>12.6} rmse={rmse_t:>12.6}");
        rows.push(vec![t.to_string(), fmt_float(nlpp_t), fmt_float(rmse_t)]);
        sum_nlpp += nlpp_t;
        sum_rmse += rmse_t;
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Config("no prediction step overlaps the truth rows".into()));
    }
    let n = scored as f64;
    println!("mean gaussian-nlpp: {:.6}", sum_nlpp / n);
    println!("mean rmse:          {:.6}", sum_rmse / n);
    println!(
        "coverage (1/2/3 sd): {:.3} {:.3} {:.3}",
        inside[0] as f64 / z_count as f64,
        inside[1] as f64 / z_count as f64,
        inside[2] as f64 / z_count as f64
    );
    if let Some(path) = out {
        write_csv(path, &["t", "gaussian_nlpp", "rmse"], &rows)?;
    }
    Ok(0)
}

/// A one-dimensional model with an informative inducing posterior over the
/// bent-line transition; enough function uncertainty to make the draw
/// strategy visible in the state marginals.
fn bias_study_model(m: usize) -> Result<GpssmModel<f64>, Error> {
    let kernel = Kernel::SquaredExponentialArd { signal_variance: 1.0, lengthscales: vec![1.0] };
    let mut z = Mat::zeros(m, 1);
    let mut mu_u = vec![0.0; m];
    for i in 0..m {
        let x = -3.2 + 4.4 * (i as f64 + 0.5) / m as f64;
        z.set(i, 0, x);
        mu_u[i] = kink_function(x);
    }
    // inducing covariance at the full prior scale: the per-trajectory
    // function draw then dominates the step noise, which is exactly the
    // regime where the two sampling schemes separate
    let sigma_u = kernel_gram_psd(&kernel, &z)?;
    Ok(GpssmModel {
        latent_dim: 1,
        control_dim: 0,
        initial_state: GaussianDist { mean: vec![0.5], cov: cholesky(&Mat::from_fn(1, 1, 0.0, |_, _| 0.01))? },
        process_noise: vec![0.0025],
        gps: vec![SparseGp { kernel, mean_fn: MeanFunction::Zero, z, mu_u, sigma_u }],
        emission: EmissionModel { c: Mat::identity(1), d: vec![0.0], r_diag: vec![0.008] },
    })
}

fn prssm_spec(t_len: usize, init: &GaussianDist<f64>, biased: bool) -> PosteriorSpec<f64> {
    PosteriorSpec {
        variant: PosteriorVariant::Prssm { biased_independent_f: biased },
        t_len,
        q_x1: init.clone(),
        a: vec![],
        b: vec![],
        s: vec![],
        chunk_dists: vec![],
        tie_across_time: true,
    }
}

fn bias_study(t_len: usize, trajectories: usize, seed: u64, out: Option<&Path>) -> Result<i32, Error> {
    let model = bias_study_model(12)?;
    let init = model.initial_state.clone();
    let corrected = prssm_spec(t_len, &init, false);
    let biased = prssm_spec(t_len, &init, true);

    let against_biased = compare_state_marginals(&model, &corrected, &biased, None, trajectories, seed)?;
    let control = compare_state_marginals(&model, &corrected, &corrected, None, trajectories, seed)?;

    let mut rows = Vec::new();
    println!("corrected vs independent per-step draws ({trajectories} trajectories):");
    for (t, dims) in against_biased.per_step.iter().enumerate() {
        for (dim, ks) in dims.iter().enumerate() {
            println!(
                "  t={t:<4} dim={dim} statistic={:.4} critical={:.4} {}",
                ks.statistic,
                ks.critical,
                if ks.rejected { "REJECTED" } else { "accepted" }
            );
            rows.push(vec![
                "corrected-vs-independent".into(),
                t.to_string(),
                dim.to_string(),
                fmt_float(ks.statistic),
                fmt_float(ks.critical),
                (ks.rejected as u8).to_string(),
            ]);
        }
    }
    for (t, dims) in control.per_step.iter().enumerate() {
        for (dim, ks) in dims.iter().enumerate() {
            rows.push(vec![
                "corrected-vs-corrected".into(),
                t.to_string(),
                dim.to_string(),
                fmt_float(ks.statistic),
                fmt_float(ks.critical),
                (ks.rejected as u8).to_string(),
            ]);
        }
    }
    println!(
        "rejections: {} of {} steps (control: {} of {})",
        against_biased.n_rejections,
        t_len,
        control.n_rejections,
        t_len
    );
    if let Some(path) = out {
        write_csv(path, &["comparison", "t", "dim", "statistic", "critical", "rejected"], &rows)?;
    }
    Ok(0)
}
