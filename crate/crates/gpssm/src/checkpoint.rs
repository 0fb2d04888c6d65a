//! Saving and restoring trained parameters.
//!
//! A checkpoint is versioned JSON holding the model structure and the
//! constrained (natural-space) parameter values keyed by layout name, so
//! files stay human-readable and survive changes to the unconstrained
//! transforms. Warm starting copies every compatible entry into a freshly
//! initialised vector and reports what it had to skip.

use crate::autodiff::{softplus, softplus_inv};
use crate::error::{Error, Result};
use crate::inference::params::{make_layout, ModelStructure, ParamLayout, Transform};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub structure: ModelStructure,
    /// Constrained values per layout entry name.
    pub params: BTreeMap<String, Vec<f64>>,
}

/// Apply an entry's transform, unconstrained to constrained.
fn constrain(transform: Transform, values: &[f64]) -> Vec<f64> {
    match transform {
        Transform::Free => values.to_vec(),
        Transform::Softplus => values.iter().map(|&v| softplus(v)).collect(),
        Transform::CholeskyFactor { dim } => {
            let mut out = Vec::with_capacity(values.len());
            let mut k = 0;
            for i in 0..dim {
                for j in 0..=i {
                    out.push(if i == j { softplus(values[k]) } else { values[k] });
                    k += 1;
                }
            }
            out
        }
    }
}

/// Invert an entry's transform, constrained back to unconstrained.
fn unconstrain(transform: Transform, values: &[f64]) -> Vec<f64> {
    let inv = |v: f64| softplus_inv(v.max(1e-12));
    match transform {
        Transform::Free => values.to_vec(),
        Transform::Softplus => values.iter().map(|&v| inv(v)).collect(),
        Transform::CholeskyFactor { dim } => {
            let mut out = Vec::with_capacity(values.len());
            let mut k = 0;
            for i in 0..dim {
                for j in 0..=i {
                    out.push(if i == j { inv(values[k]) } else { values[k] });
                    k += 1;
                }
            }
            out
        }
    }
}

impl Checkpoint {
    pub fn from_theta(structure: &ModelStructure, layout: &ParamLayout, theta: &[f64]) -> Result<Self> {
        if theta.len() != layout.total {
            return Err(Error::DimensionMismatch { expected: layout.total, got: theta.len(), context: "checkpoint parameters" });
        }
        let mut params = BTreeMap::new();
        for e in &layout.entries {
            params.insert(e.name.clone(), constrain(e.transform, &theta[e.offset..e.offset + e.len]));
        }
        Ok(Checkpoint { version: CHECKPOINT_VERSION, structure: structure.clone(), params })
    }

    /// Rebuild the unconstrained vector for this checkpoint's own structure.
    pub fn to_theta(&self) -> Result<(ParamLayout, Vec<f64>)> {
        let layout = make_layout(&self.structure);
        let mut theta = vec![0.0; layout.total];
        for e in &layout.entries {
            let values = self.params.get(&e.name).ok_or_else(|| Error::SchemaMismatch {
                message: format!("checkpoint is missing parameter {:?}", e.name),
            })?;
            if values.len() != e.len {
                return Err(Error::SchemaMismatch {
                    message: format!(
                        "checkpoint parameter {:?} has {} values, layout expects {}",
                        e.name,
                        values.len(),
                        e.len
                    ),
                });
            }
            theta[e.offset..e.offset + e.len].copy_from_slice(&unconstrain(e.transform, values));
        }
        Ok((layout, theta))
    }

    /// Copy every compatible entry onto `fallback` (an initialised vector
    /// for `target`). Entries the checkpoint lacks, or whose length
    /// differs (a different trajectory length, say), keep their fallback
    /// values and are reported back.
    pub fn warm_start(&self, target: &ModelStructure, fallback: &[f64]) -> Result<(Vec<f64>, Vec<String>)> {
        let layout = make_layout(target);
        if fallback.len() != layout.total {
            return Err(Error::DimensionMismatch { expected: layout.total, got: fallback.len(), context: "warm start fallback" });
        }
        let mut theta = fallback.to_vec();
        let mut skipped = Vec::new();
        for e in &layout.entries {
            match self.params.get(&e.name) {
                Some(values) if values.len() == e.len => {
                    theta[e.offset..e.offset + e.len].copy_from_slice(&unconstrain(e.transform, values));
                }
                _ => skipped.push(e.name.clone()),
            }
        }
        Ok((theta, skipped))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string_pretty(checkpoint)
        .map_err(|e| Error::Io(format!("encoding checkpoint: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::Io(format!("writing {}: {}", path.display(), e)))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("reading {}: {}", path.display(), e)))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch {
        message: format!("invalid checkpoint {}: {}", path.display(), e),
    })?;
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::SchemaMismatch {
            message: format!(
                "checkpoint version {} unsupported; this build reads version {}",
                checkpoint.version, CHECKPOINT_VERSION
            ),
        });
    }
    Ok(checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{kernel_gram_psd, Kernel, MeanFunction, SparseGp};
    use crate::inference::params::flatten;
    use crate::linalg::{cholesky, GaussianDist, Mat};
    use crate::model::{EmissionModel, GpssmModel};
    use crate::posterior::{filtering_init, PosteriorVariant};

    fn toy(variant: PosteriorVariant, t_len: usize) -> (ModelStructure, ParamLayout, Vec<f64>) {
        let kernel = Kernel::SquaredExponentialArd { signal_variance: 1.2, lengthscales: vec![0.7] };
        let z = Mat::from_vec(3, 1, vec![-1.0, 0.0, 1.0]);
        let kzz = kernel_gram_psd(&kernel, &z).unwrap();
        let model = GpssmModel {
            latent_dim: 1,
            control_dim: 0,
            initial_state: GaussianDist { mean: vec![0.0], cov: cholesky(&Mat::identity(1)).unwrap() },
            process_noise: vec![0.2],
            gps: vec![SparseGp { kernel, mean_fn: MeanFunction::Identity { output_index: 0 }, z, mu_u: vec![0.1, -0.4, 0.3], sigma_u: kzz }],
            emission: EmissionModel { c: Mat::from_vec(1, 1, vec![1.1]), d: vec![0.2], r_diag: vec![0.5] },
        };
        let obs = Mat::from_vec(t_len, 1, (0..t_len).map(|t| (t as f64 * 0.7).sin()).collect());
        let spec = filtering_init(&model, &obs, variant, true).unwrap();
        let structure = ModelStructure::infer(&model, &spec).unwrap();
        let layout = make_layout(&structure);
        let theta = flatten(&structure, &layout, &model, &spec).unwrap();
        (structure, layout, theta)
    }

    fn tmp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("gpssm-checkpoint-test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn file_round_trip_recovers_the_vector() {
        let (structure, layout, theta) = toy(PosteriorVariant::Vcdt, 6);
        let cp = Checkpoint::from_theta(&structure, &layout, &theta).unwrap();
        let path = tmp_path("roundtrip.json");
        save_checkpoint(&path, &cp).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.structure, structure);
        let (layout2, theta2) = loaded.to_theta().unwrap();
        assert_eq!(layout2.total, layout.total);
        for (a, b) in theta.iter().zip(&theta2) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn constrained_values_are_natural_space() {
        let (structure, layout, theta) = toy(PosteriorVariant::Vcdt, 6);
        let cp = Checkpoint::from_theta(&structure, &layout, &theta).unwrap();
        // process noise was 0.2 in natural space
        let q = &cp.params["process_noise"];
        assert!((q[0] - 0.2).abs() < 1e-12, "{}", q[0]);
        let r = &cp.params["emission.r"];
        assert!((r[0] - 0.5).abs() < 1e-12, "{}", r[0]);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let (structure, layout, theta) = toy(PosteriorVariant::Vcdt, 6);
        let mut cp = Checkpoint::from_theta(&structure, &layout, &theta).unwrap();
        cp.version = 99;
        let path = tmp_path("badversion.json");
        save_checkpoint(&path, &cp).unwrap();
        match load_checkpoint(&path) {
            Err(Error::SchemaMismatch { message }) => assert!(message.contains("99"), "{message}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_json_is_a_schema_error() {
        let path = tmp_path("corrupt.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn warm_start_copies_shared_entries_and_skips_length_changes() {
        let (structure6, layout6, theta6) = toy(PosteriorVariant::Vcdt, 6);
        let cp = Checkpoint::from_theta(&structure6, &layout6, &theta6).unwrap();

        // same variant, longer trajectory: per-step offsets change length
        let (structure9, layout9, fallback9) = toy(PosteriorVariant::Vcdt, 9);
        let (theta, skipped) = cp.warm_start(&structure9, &fallback9).unwrap();
        assert!(skipped.contains(&"step.b".to_string()), "{skipped:?}");
        let mu = layout9.find("mu_u.d0").unwrap();
        let mu6 = layout6.find("mu_u.d0").unwrap();
        assert_eq!(
            theta[mu.offset..mu.offset + mu.len],
            theta6[mu6.offset..mu6.offset + mu6.len]
        );
        let b = layout9.find("step.b").unwrap();
        assert_eq!(
            theta[b.offset..b.offset + b.len],
            fallback9[b.offset..b.offset + b.len]
        );

        // different variant gaining chunk distributions: those stay fallback
        let (chunked, layout_c, fallback_c) = toy(PosteriorVariant::NonFactorisedChunked { chunk_length: 2 }, 6);
        let (theta_c, skipped_c) = cp.warm_start(&chunked, &fallback_c).unwrap();
        assert!(skipped_c.iter().any(|s| s.starts_with("chunk.")), "{skipped_c:?}");
        let mu_c = layout_c.find("mu_u.d0").unwrap();
        assert_eq!(
            theta_c[mu_c.offset..mu_c.offset + mu_c.len],
            theta6[mu6.offset..mu6.offset + mu6.len]
        );
    }
}
