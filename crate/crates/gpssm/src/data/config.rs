//! Experiment configuration: one TOML file describes data, model,
//! posterior, training, and prediction. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use crate::error::{Error, Result};
use crate::inference::params::ParamGroup;
use crate::inference::TrainConfig;
use crate::posterior::PosteriorVariant;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub posterior: PosteriorConfig,
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// "kink" simulates the bent-line benchmark; "csv" loads a table.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observation_columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub control_columns: Vec<String>,
    /// Simulated length (kink) or truncation after loading (csv).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_sd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_sd: Option<f64>,
    #[serde(default)]
    pub normalise: bool,
    /// Leading fraction of rows used for training; the rest is held out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub n_inducing: usize,
    #[serde(default = "default_kernel")]
    pub kernel: String,
    /// "zero", "identity" (default), or "kink".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_function: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_sd_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_sd_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengthscale_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_sd_init: Option<f64>,
}

fn default_kernel() -> String {
    "squared-exponential".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorConfig {
    /// One of: factorised-linear, factorised-nonlinear, chunked, vcdt,
    /// prssm, prssm-biased.
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_length: Option<usize>,
    #[serde(default = "default_true")]
    pub tie_across_time: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub mc_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_variational: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_hyper: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub freeze: Vec<String>,
    #[serde(default, rename = "lr_override", skip_serializing_if = "Vec::is_empty")]
    pub lr_overrides: Vec<LrOverride>,
    #[serde(default, rename = "decay", skip_serializing_if = "Vec::is_empty")]
    pub decay: Vec<DecayStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrOverride {
    pub group: String,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayStep {
    pub iteration: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    pub horizon: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100
}

/// Parameter-group names accepted in `freeze` and `lr_override`.
pub fn parse_group(name: &str) -> Result<ParamGroup> {
    Ok(match name {
        "kernel" => ParamGroup::Kernel,
        "mean_fn" => ParamGroup::MeanFn,
        "inducing_inputs" => ParamGroup::InducingInputs,
        "inducing_dist" => ParamGroup::InducingDist,
        "process_noise" => ParamGroup::ProcessNoise,
        "emission" => ParamGroup::Emission,
        "init_state" => ParamGroup::InitState,
        "step_params" => ParamGroup::StepParams,
        "chunk_dists" => ParamGroup::ChunkDists,
        other => {
            return Err(Error::Config(format!(
                "unknown parameter group {other:?}; expected one of kernel, mean_fn, \
                 inducing_inputs, inducing_dist, process_noise, emission, init_state, \
                 step_params, chunk_dists"
            )))
        }
    })
}

impl PosteriorConfig {
    pub fn to_variant(&self) -> Result<PosteriorVariant> {
        let variant = match self.variant.as_str() {
            "factorised-linear" => PosteriorVariant::FactorisedLinear,
            "factorised-nonlinear" => PosteriorVariant::FactorisedNonLinear,
            "chunked" => {
                let chunk_length = self.chunk_length.ok_or_else(|| {
                    Error::Config("chunked posterior needs chunk_length".into())
                })?;
                if chunk_length == 0 {
                    return Err(Error::Config("chunk_length must be at least 1".into()));
                }
                PosteriorVariant::NonFactorisedChunked { chunk_length }
            }
            "vcdt" => PosteriorVariant::Vcdt,
            "prssm" => PosteriorVariant::Prssm { biased_independent_f: false },
            "prssm-biased" => PosteriorVariant::Prssm { biased_independent_f: true },
            other => {
                return Err(Error::Config(format!(
                    "unknown posterior variant {other:?}; expected one of factorised-linear, \
                     factorised-nonlinear, chunked, vcdt, prssm, prssm-biased"
                )))
            }
        };
        if self.chunk_length.is_some() && !matches!(variant, PosteriorVariant::NonFactorisedChunked { .. }) {
            return Err(Error::Config(format!(
                "chunk_length only applies to the chunked variant, not {:?}",
                self.variant
            )));
        }
        Ok(variant)
    }
}

impl TrainingConfig {
    pub fn to_train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut base = TrainConfig::default();
        base.n_mc_samples = self.mc_samples;
        base.max_iterations = self.iterations;
        base.seed = seed;
        if let Some(lr) = self.lr_variational {
            base.lr_variational = lr;
        }
        if let Some(lr) = self.lr_hyper {
            base.lr_hyper = lr;
        }
        base.freeze = self.freeze.iter().map(|s| parse_group(s)).collect::<Result<_>>()?;
        base.lr_overrides = self
            .lr_overrides
            .iter()
            .map(|o| Ok((parse_group(&o.group)?, o.lr)))
            .collect::<Result<_>>()?;
        base.lr_decay = self.decay.iter().map(|d| (d.iteration, d.factor)).collect();
        if let Some(tol) = self.convergence_tol {
            base.rel_tol = tol;
        }
        if let Some(w) = self.convergence_window {
            base.rel_window = w;
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
            base.clip_norm = c;
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        Ok(base)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match self.data.source.as_str() {
            "kink" => {
                if self.data.path.is_some() || !self.data.observation_columns.is_empty() {
                    return Err(Error::Config(
                        "kink data is simulated; path and column selections do not apply".into(),
                    ));
                }
            }
            "csv" => {
                if self.data.path.is_none() {
                    return Err(Error::Config("csv data needs a path".into()));
                }
                if self.data.observation_columns.is_empty() {
                    return Err(Error::Config("csv data needs observation_columns".into()));
                }
                if self.data.process_sd.is_some() || self.data.obs_sd.is_some() {
                    return Err(Error::Config(
                        "process_sd and obs_sd configure the kink simulator, not csv data".into(),
                    ));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown data source {other:?}; expected kink or csv"
                )))
            }
        }
        if let Some(f) = self.data.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("train_fraction {f} outside (0, 1]")));
            }
        }
        if self.model.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.model.n_inducing == 0 {
            return Err(Error::Config("n_inducing must be at least 1".into()));
        }
        match self.model.kernel.as_str() {
            "squared-exponential" | "linear" => {}
            other => {
                return Err(Error::Config(format!(
                    "unknown kernel {other:?}; expected squared-exponential or linear"
                )))
            }
        }
        if let Some(m) = &self.model.mean_function {
            match m.as_str() {
                "zero" | "identity" | "kink" => {}
                other => {
                    return Err(Error::Config(format!(
                        "unknown mean function {other:?}; expected zero, identity, or kink"
                    )))
                }
            }
        }
        self.posterior.to_variant()?;
        self.training.to_train_config(self.seed)?;
        if let Some(p) = &self.prediction {
            if p.samples == 0 {
                return Err(Error::Config("prediction samples must be at least 1".into()));
            }
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("reading {}: {}", path.display(), e)))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
name = "kink-demo"
seed = 7

[data]
source = "kink"
t_len = 120
process_sd = 0.05
obs_sd = 0.894427
normalise = false

[model]
latent_dim = 1
n_inducing = 15
kernel = "squared-exponential"
process_sd_init = 0.5
obs_sd_init = 0.894427

[posterior]
variant = "vcdt"

[training]
iterations = 50
mc_samples = 10
freeze = ["emission"]

[[training.lr_override]]
group = "process_noise"
lr = 0.01

[[training.decay]]
iteration = 30
factor = 0.3

[prediction]
horizon = 20
samples = 50
"#;

    #[test]
    fn full_config_parses_and_maps() {
        let config = parse_config(FULL).unwrap();
        assert_eq!(config.name, "kink-demo");
        assert_eq!(config.posterior.to_variant().unwrap(), PosteriorVariant::Vcdt);
        let tc = config.training.to_train_config(config.seed).unwrap();
        assert_eq!(tc.max_iterations, 50);
        assert_eq!(tc.freeze, vec![ParamGroup::Emission]);
        assert_eq!(tc.lr_overrides, vec![(ParamGroup::ProcessNoise, 0.01)]);
        assert_eq!(tc.lr_decay, vec![(30, 0.3)]);
        assert_eq!(config.prediction.as_ref().unwrap().horizon, 20);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = FULL.replace("normalise = false", "normalize = false");
        let err = parse_config(&bad).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("normalize"), "{msg}"),
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn every_variant_name_maps() {
        let cases = [
            ("factorised-linear", PosteriorVariant::FactorisedLinear),
            ("factorised-nonlinear", PosteriorVariant::FactorisedNonLinear),
            ("vcdt", PosteriorVariant::Vcdt),
            ("prssm", PosteriorVariant::Prssm { biased_independent_f: false }),
            ("prssm-biased", PosteriorVariant::Prssm { biased_independent_f: true }),
        ];
        for (name, expect) in cases {
            let pc = PosteriorConfig { variant: name.into(), chunk_length: None, tie_across_time: true };
            assert_eq!(pc.to_variant().unwrap(), expect);
        }
        let chunked = PosteriorConfig { variant: "chunked".into(), chunk_length: Some(3), tie_across_time: true };
        assert_eq!(
            chunked.to_variant().unwrap(),
            PosteriorVariant::NonFactorisedChunked { chunk_length: 3 }
        );
        let missing = PosteriorConfig { variant: "chunked".into(), chunk_length: None, tie_across_time: true };
        assert!(missing.to_variant().is_err());
        let stray = PosteriorConfig { variant: "vcdt".into(), chunk_length: Some(2), tie_across_time: true };
        assert!(stray.to_variant().is_err());
        let unknown = PosteriorConfig { variant: "mystery".into(), chunk_length: None, tie_across_time: true };
        match unknown.to_variant() {
            Err(Error::Config(msg)) => assert!(msg.contains("mystery")),
            other => panic!("wrong result {other:?}"),
        }
    }

    #[test]
    fn csv_source_requires_path_and_columns() {
        let text = FULL
            .replace("source = \"kink\"", "source = \"csv\"")
            .replace("t_len = 120\n", "")
            .replace("process_sd = 0.05\n", "")
            .replace("obs_sd = 0.894427\n", "");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn group_names_round_trip() {
        for name in [
            "kernel",
            "mean_fn",
            "inducing_inputs",
            "inducing_dist",
            "process_noise",
            "emission",
            "init_state",
            "step_params",
            "chunk_dists",
        ] {
            parse_group(name).unwrap();
        }
        assert!(parse_group("bogus").is_err());
    }

    #[test]
    fn serialisation_is_stable_for_hashing() {
        let config = parse_config(FULL).unwrap();
        let a = toml::to_string(&config).unwrap();
        let b = toml::to_string(&parse_config(FULL).unwrap()).unwrap();
        assert_eq!(a, b);
        let reparsed = parse_config(&a).unwrap();
        assert_eq!(reparsed, config);
    }
}
