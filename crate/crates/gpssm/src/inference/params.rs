//! Flat parameter vectors in unconstrained space.
//!
//! Training works on one `Vec<f64>`; a [`ParamLayout`] names each slice of
//! it, assigns it a group (for learning rates and freezing), and records the
//! transform to constrained space. [`build`] rebuilds a model and posterior
//! from any scalar type, so the same code produces f64 values and tape
//! variables.

use crate::autodiff::{softplus_inv, Scalar};
use crate::error::{Error, Result};
use crate::gp::{kernel_gram_psd, Kernel, MeanFunction, SparseGp};
use crate::linalg::{GaussianDist, Mat, PsdMatrix};
use crate::model::{EmissionModel, GpssmModel};
use crate::posterior::{chunk_blocks, PosteriorSpec, PosteriorVariant};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Kernel,
    MeanFn,
    InducingInputs,
    InducingDist,
    ProcessNoise,
    Emission,
    InitState,
    StepParams,
    ChunkDists,
}

impl ParamGroup {
    /// Variational parameters get the faster default learning rate.
    pub fn is_variational(self) -> bool {
        matches!(
            self,
            ParamGroup::InducingDist
                | ParamGroup::InitState
                | ParamGroup::StepParams
                | ParamGroup::ChunkDists
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Free,
    Softplus,
    /// Packed row-major lower triangle of a `dim` x `dim` factor, diagonal
    /// entries passed through softplus to stay positive.
    CholeskyFactor { dim: usize },
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub offset: usize,
    pub len: usize,
    pub transform: Transform,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn slice<'a, S>(&self, theta: &'a [S], name: &str) -> Result<&'a [S]> {
        let e = self
            .find(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        Ok(&theta[e.offset..e.offset + e.len])
    }

    /// Entry covering flat index `i`.
    pub fn entry_at(&self, i: usize) -> &ParamEntry {
        self.entries
            .iter()
            .find(|e| i >= e.offset && i < e.offset + e.len)
            .expect("index inside layout")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    SquaredExponentialArd,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanKind {
    Zero,
    /// GP `d` passes input coordinate `d` through.
    Identity,
    Affine,
    Kink,
}

/// Everything needed to rebuild a model and posterior from a flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStructure {
    pub latent_dim: usize,
    pub control_dim: usize,
    pub obs_dim: usize,
    pub n_inducing: usize,
    pub t_len: usize,
    pub kernel: KernelKind,
    pub mean_fn: MeanKind,
    pub variant: PosteriorVariant,
    pub tie_across_time: bool,
    /// The fixed model prior over the first state: mean and packed factor.
    pub init_prior_mean: Vec<f64>,
    pub init_prior_chol: Vec<f64>,
}

impl ModelStructure {
    pub fn input_dim(&self) -> usize {
        self.latent_dim + self.control_dim
    }

    pub fn n_steps(&self) -> usize {
        self.t_len.saturating_sub(1)
    }

    pub fn n_chunk_dists(&self) -> usize {
        match &self.variant {
            PosteriorVariant::NonFactorisedChunked { chunk_length } => {
                chunk_blocks(self.t_len, *chunk_length).len().saturating_sub(1)
            }
            _ => 0,
        }
    }

    /// Recover the structure from a concrete model/posterior pair.
    pub fn infer(model: &GpssmModel<f64>, spec: &PosteriorSpec<f64>) -> Result<Self> {
        model.validate()?;
        let kernel = match &model.gps[0].kernel {
            Kernel::SquaredExponentialArd { .. } => KernelKind::SquaredExponentialArd,
            Kernel::Linear { .. } => KernelKind::Linear,
        };
        let mean_fn = match &model.gps[0].mean_fn {
            MeanFunction::Zero => MeanKind::Zero,
            MeanFunction::Identity { .. } => MeanKind::Identity,
            MeanFunction::AffineProjection { .. } => MeanKind::Affine,
            MeanFunction::Kink => MeanKind::Kink,
        };
        Ok(ModelStructure {
            latent_dim: model.latent_dim,
            control_dim: model.control_dim,
            obs_dim: model.emission.obs_dim(),
            n_inducing: model.gps[0].n_inducing(),
            t_len: spec.t_len,
            kernel,
            mean_fn,
            variant: spec.variant.clone(),
            tie_across_time: spec.tie_across_time,
            init_prior_mean: model.initial_state.mean.clone(),
            init_prior_chol: pack_lower(model.initial_state.cov.lower()),
        })
    }
}

fn tril_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Pack the lower triangle of a factor row-major (no transform applied).
pub fn pack_lower<S: Scalar>(l: &Mat<S>) -> Vec<f64> {
    let mut out = Vec::with_capacity(tril_len(l.rows()));
    for i in 0..l.rows() {
        for j in 0..=i {
            out.push(l.at(i, j).val());
        }
    }
    out
}

/// Unconstrained slice -> lower-triangular factor, softplus on the diagonal.
fn unpack_tril<S: Scalar>(theta: &[S], dim: usize) -> Mat<S> {
    let zero = theta[0].lift(0.0);
    let mut l = Mat::from_vec(dim, dim, vec![zero; dim * dim]);
    let mut k = 0;
    for i in 0..dim {
        for j in 0..=i {
            let v = if i == j { theta[k].softplus() } else { theta[k] };
            l.set(i, j, v);
            k += 1;
        }
    }
    l
}

fn unpack_chol<S: Scalar>(theta: &[S], dim: usize) -> PsdMatrix<S> {
    PsdMatrix::from_lower(unpack_tril(theta, dim))
}

/// Lower factor -> unconstrained packed slice, softplus-inverse on the
/// diagonal.
fn pack_tril(l: &Mat<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(tril_len(l.rows()));
    for i in 0..l.rows() {
        for j in 0..=i {
            let v = l.at(i, j);
            out.push(if i == j { softplus_inv(v.max(1e-12)) } else { v });
        }
    }
    out
}

fn repack_chol(factor: &PsdMatrix<f64>) -> Vec<f64> {
    pack_tril(factor.lower())
}

fn entry_names(structure: &ModelStructure) -> Vec<(String, ParamGroup, usize, Transform)> {
    let d = structure.latent_dim;
    let din = structure.input_dim();
    let m = structure.n_inducing;
    let e = structure.obs_dim;
    let mut out = Vec::new();
    for j in 0..d {
        match structure.kernel {
            KernelKind::SquaredExponentialArd => {
                out.push((format!("kernel.d{j}.signal_variance"), ParamGroup::Kernel, 1, Transform::Softplus));
                out.push((format!("kernel.d{j}.lengthscales"), ParamGroup::Kernel, din, Transform::Softplus));
            }
            KernelKind::Linear => {
                out.push((format!("kernel.d{j}.weight_variances"), ParamGroup::Kernel, din, Transform::Softplus));
            }
        }
    }
    if structure.mean_fn == MeanKind::Affine {
        for j in 0..d {
            out.push((format!("mean.d{j}.weights"), ParamGroup::MeanFn, din, Transform::Free));
            out.push((format!("mean.d{j}.offset"), ParamGroup::MeanFn, 1, Transform::Free));
        }
    }
    out.push(("z".into(), ParamGroup::InducingInputs, m * din, Transform::Free));
    // The inducing distribution is stored in whitened coordinates: with
    // L the prior factor at z, the entries hold v and Lv such that
    // mu_u = m(z) + L v and sigma_u = L Lv. A coordinate step then costs
    // KL proportional to its own size instead of being amplified by the
    // prior's condition number, which for a squared-exponential gram over
    // tens of nearby points reaches 1e10.
    for j in 0..d {
        out.push((format!("mu_u.d{j}"), ParamGroup::InducingDist, m, Transform::Free));
        out.push((format!("sigma_u.d{j}"), ParamGroup::InducingDist, tril_len(m), Transform::CholeskyFactor { dim: m }));
    }
    out.push(("process_noise".into(), ParamGroup::ProcessNoise, d, Transform::Softplus));
    out.push(("emission.c".into(), ParamGroup::Emission, e * d, Transform::Free));
    out.push(("emission.d".into(), ParamGroup::Emission, e, Transform::Free));
    out.push(("emission.r".into(), ParamGroup::Emission, e, Transform::Softplus));
    out.push(("q_x1.mean".into(), ParamGroup::InitState, d, Transform::Free));
    out.push(("q_x1.chol".into(), ParamGroup::InitState, tril_len(d), Transform::CholeskyFactor { dim: d }));
    if structure.variant.has_step_params() {
        let n_a = if structure.tie_across_time { 1 } else { structure.n_steps() };
        out.push(("step.a".into(), ParamGroup::StepParams, n_a * d * d, Transform::Free));
        out.push(("step.b".into(), ParamGroup::StepParams, structure.n_steps() * d, Transform::Free));
        out.push(("step.s".into(), ParamGroup::StepParams, n_a * d, Transform::Softplus));
    }
    for i in 0..structure.n_chunk_dists() {
        out.push((format!("chunk.{i}.mean"), ParamGroup::ChunkDists, d, Transform::Free));
        out.push((format!("chunk.{i}.chol"), ParamGroup::ChunkDists, tril_len(d), Transform::CholeskyFactor { dim: d }));
    }
    out
}

pub fn make_layout(structure: &ModelStructure) -> ParamLayout {
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, group, len, transform) in entry_names(structure) {
        entries.push(ParamEntry { name, group, offset, len, transform });
        offset += len;
    }
    ParamLayout { entries, total: offset }
}

/// Rebuild the model and posterior from an unconstrained flat vector.
pub fn build<S: Scalar>(
    structure: &ModelStructure,
    layout: &ParamLayout,
    theta: &[S],
) -> Result<(GpssmModel<S>, PosteriorSpec<S>)> {
    if theta.len() != layout.total {
        return Err(Error::DimensionMismatch { expected: layout.total, got: theta.len(), context: "parameter vector" });
    }
    let d = structure.latent_dim;
    let din = structure.input_dim();
    let m = structure.n_inducing;
    let e = structure.obs_dim;
    let w = theta[0];

    let mat_from = |s: &[S], rows: usize, cols: usize| Mat::from_vec(rows, cols, s.to_vec());
    let softplus_all = |s: &[S]| -> Vec<S> { s.iter().map(|v| v.softplus()).collect() };

    let z = mat_from(layout.slice(theta, "z")?, m, din);
    let mut gps = Vec::with_capacity(d);
    for j in 0..d {
        let kernel = match structure.kernel {
            KernelKind::SquaredExponentialArd => Kernel::SquaredExponentialArd {
                signal_variance: layout.slice(theta, &format!("kernel.d{j}.signal_variance"))?[0].softplus(),
                lengthscales: softplus_all(layout.slice(theta, &format!("kernel.d{j}.lengthscales"))?),
            },
            KernelKind::Linear => Kernel::Linear {
                weight_variances: softplus_all(layout.slice(theta, &format!("kernel.d{j}.weight_variances"))?),
            },
        };
        let mean_fn = match structure.mean_fn {
            MeanKind::Zero => MeanFunction::Zero,
            MeanKind::Identity => MeanFunction::Identity { output_index: j },
            MeanKind::Kink => MeanFunction::Kink,
            MeanKind::Affine => MeanFunction::AffineProjection {
                weights: layout.slice(theta, &format!("mean.d{j}.weights"))?.to_vec(),
                offset: layout.slice(theta, &format!("mean.d{j}.offset"))?[0],
            },
        };
        // de-whiten: the stored coordinates are relative to the prior at z
        let prior = kernel_gram_psd(&kernel, &z)?;
        let lzz = prior.lower();
        let v = layout.slice(theta, &format!("mu_u.d{j}"))?;
        let lv = unpack_tril(layout.slice(theta, &format!("sigma_u.d{j}"))?, m);
        let mut mu_u = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = mean_fn.eval(z.row(i));
            for k in 0..=i {
                acc = acc + lzz.at(i, k) * v[k];
            }
            mu_u.push(acc);
        }
        let sigma_u = PsdMatrix::from_lower(lzz.matmul(&lv));
        gps.push(SparseGp { kernel, mean_fn, z: z.clone(), mu_u, sigma_u });
    }

    let init_chol = {
        let zero = w.lift(0.0);
        let mut l = Mat::from_vec(d, d, vec![zero; d * d]);
        let mut k = 0;
        for i in 0..d {
            for j in 0..=i {
                l.set(i, j, w.lift(structure.init_prior_chol[k]));
                k += 1;
            }
        }
        PsdMatrix::from_lower(l)
    };
    let model = GpssmModel {
        latent_dim: d,
        control_dim: structure.control_dim,
        initial_state: GaussianDist {
            mean: structure.init_prior_mean.iter().map(|&v| w.lift(v)).collect(),
            cov: init_chol,
        },
        process_noise: softplus_all(layout.slice(theta, "process_noise")?),
        gps,
        emission: EmissionModel {
            c: mat_from(layout.slice(theta, "emission.c")?, e, d),
            d: layout.slice(theta, "emission.d")?.to_vec(),
            r_diag: softplus_all(layout.slice(theta, "emission.r")?),
        },
    };

    let q_x1 = GaussianDist {
        mean: layout.slice(theta, "q_x1.mean")?.to_vec(),
        cov: unpack_chol(layout.slice(theta, "q_x1.chol")?, d),
    };
    let (a, b, s) = if structure.variant.has_step_params() {
        let n_a = if structure.tie_across_time { 1 } else { structure.n_steps() };
        let a_flat = layout.slice(theta, "step.a")?;
        let a: Vec<Mat<S>> = (0..n_a).map(|t| mat_from(&a_flat[t * d * d..(t + 1) * d * d], d, d)).collect();
        let b_flat = layout.slice(theta, "step.b")?;
        let b: Vec<Vec<S>> = (0..structure.n_steps()).map(|t| b_flat[t * d..(t + 1) * d].to_vec()).collect();
        let s_flat = layout.slice(theta, "step.s")?;
        let s: Vec<Vec<S>> = (0..n_a).map(|t| softplus_all(&s_flat[t * d..(t + 1) * d])).collect();
        (a, b, s)
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    let chunk_dists: Result<Vec<GaussianDist<S>>> = (0..structure.n_chunk_dists())
        .map(|i| {
            Ok(GaussianDist {
                mean: layout.slice(theta, &format!("chunk.{i}.mean"))?.to_vec(),
                cov: unpack_chol(layout.slice(theta, &format!("chunk.{i}.chol"))?, d),
            })
        })
        .collect();

    let spec = PosteriorSpec {
        variant: structure.variant.clone(),
        t_len: structure.t_len,
        q_x1,
        a,
        b,
        s,
        chunk_dists: chunk_dists?,
        tie_across_time: structure.tie_across_time,
    };
    Ok((model, spec))
}

/// Project a concrete model/posterior pair into unconstrained coordinates.
pub fn flatten(
    structure: &ModelStructure,
    layout: &ParamLayout,
    model: &GpssmModel<f64>,
    spec: &PosteriorSpec<f64>,
) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; layout.total];
    let d = structure.latent_dim;
    let mut put = |name: &str, values: Vec<f64>| -> Result<()> {
        let e = layout
            .find(name)
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))?;
        if values.len() != e.len {
            return Err(Error::DimensionMismatch { expected: e.len, got: values.len(), context: "flatten" });
        }
        theta[e.offset..e.offset + e.len].copy_from_slice(&values);
        Ok(())
    };
    let inv_all = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| softplus_inv(x.max(1e-12))).collect() };

    for j in 0..d {
        match &model.gps[j].kernel {
            Kernel::SquaredExponentialArd { signal_variance, lengthscales } => {
                put(&format!("kernel.d{j}.signal_variance"), inv_all(&[*signal_variance]))?;
                put(&format!("kernel.d{j}.lengthscales"), inv_all(lengthscales))?;
            }
            Kernel::Linear { weight_variances } => {
                put(&format!("kernel.d{j}.weight_variances"), inv_all(weight_variances))?;
            }
        }
        if let MeanFunction::AffineProjection { weights, offset } = &model.gps[j].mean_fn {
            put(&format!("mean.d{j}.weights"), weights.clone())?;
            put(&format!("mean.d{j}.offset"), vec![*offset])?;
        }
        // whiten against the prior at z; triangular solves invert build's map
        let gp = &model.gps[j];
        let m = gp.n_inducing();
        let prior = kernel_gram_psd(&gp.kernel, &gp.z)?;
        let diff: Vec<f64> = (0..m)
            .map(|i| gp.mu_u[i] - gp.mean_fn.eval(gp.z.row(i)))
            .collect();
        put(&format!("mu_u.d{j}"), prior.solve_lower(&diff)?)?;
        let lu = gp.sigma_u.lower();
        let mut lv = Mat::zeros(m, m);
        for c in 0..m {
            let col: Vec<f64> = (0..m).map(|r| lu.at(r, c)).collect();
            let x = prior.solve_lower(&col)?;
            for (r, xv) in x.iter().enumerate() {
                lv.set(r, c, *xv);
            }
        }
        put(&format!("sigma_u.d{j}"), pack_tril(&lv))?;
    }
    put("z", model.gps[0].z.data().to_vec())?;
    put("process_noise", inv_all(&model.process_noise))?;
    put("emission.c", model.emission.c.data().to_vec())?;
    put("emission.d", model.emission.d.clone())?;
    put("emission.r", inv_all(&model.emission.r_diag))?;
    put("q_x1.mean", spec.q_x1.mean.clone())?;
    put("q_x1.chol", repack_chol(&spec.q_x1.cov))?;
    if structure.variant.has_step_params() {
        let a_flat: Vec<f64> = spec.a.iter().flat_map(|m| m.data().iter().copied()).collect();
        put("step.a", a_flat)?;
        let b_flat: Vec<f64> = spec.b.iter().flat_map(|r| r.iter().copied()).collect();
        put("step.b", b_flat)?;
        let s_flat: Vec<f64> = spec.s.iter().flat_map(|r| inv_all(r)).collect();
        put("step.s", s_flat)?;
    }
    for i in 0..structure.n_chunk_dists() {
        put(&format!("chunk.{i}.mean"), spec.chunk_dists[i].mean.clone())?;
        put(&format!("chunk.{i}.chol"), repack_chol(&spec.chunk_dists[i].cov))?;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky;
    use crate::posterior::filtering_init;
    use approx::assert_abs_diff_eq;

    fn toy_pair(variant: PosteriorVariant) -> (GpssmModel<f64>, PosteriorSpec<f64>) {
        let m = 3;
        let kernel = Kernel::SquaredExponentialArd { signal_variance: 1.4, lengthscales: vec![0.9] };
        let z = Mat::from_vec(m, 1, vec![-1.0, 0.0, 1.0]);
        let kzz = crate::gp::kernel_gram_psd(&kernel, &z).unwrap();
        let model = GpssmModel {
            latent_dim: 1,
            control_dim: 0,
            initial_state: GaussianDist { mean: vec![0.2], cov: cholesky(&Mat::identity(1)).unwrap() },
            process_noise: vec![0.07],
            gps: vec![SparseGp {
                kernel,
                mean_fn: MeanFunction::Identity { output_index: 0 },
                z,
                mu_u: vec![0.3, -0.1, 0.8],
                sigma_u: kzz,
            }],
            emission: EmissionModel { c: Mat::from_vec(1, 1, vec![1.3]), d: vec![-0.2], r_diag: vec![0.4] },
        };
        let obs = Mat::from_vec(6, 1, vec![0.1, 0.4, -0.2, 0.3, 0.0, 0.5]);
        let spec = filtering_init(&model, &obs, variant, false).unwrap();
        (model, spec)
    }

    #[test]
    fn flatten_build_round_trips() {
        for variant in [
            PosteriorVariant::FactorisedLinear,
            PosteriorVariant::Vcdt,
            PosteriorVariant::NonFactorisedChunked { chunk_length: 2 },
            PosteriorVariant::Prssm { biased_independent_f: false },
        ] {
            let (model, spec) = toy_pair(variant);
            let structure = ModelStructure::infer(&model, &spec).unwrap();
            let layout = make_layout(&structure);
            let theta = flatten(&structure, &layout, &model, &spec).unwrap();
            assert_eq!(theta.len(), layout.total);
            let (model2, spec2) = build(&structure, &layout, &theta).unwrap();
            assert_abs_diff_eq!(model2.process_noise[0], model.process_noise[0], epsilon = 1e-10);
            assert_abs_diff_eq!(model2.emission.c.at(0, 0), 1.3, epsilon = 1e-12);
            assert_abs_diff_eq!(model2.emission.r_diag[0], 0.4, epsilon = 1e-10);
            match (&model2.gps[0].kernel, &model.gps[0].kernel) {
                (
                    Kernel::SquaredExponentialArd { signal_variance: a, lengthscales: la },
                    Kernel::SquaredExponentialArd { signal_variance: b, lengthscales: lb },
                ) => {
                    assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
                    assert_abs_diff_eq!(la[0], lb[0], epsilon = 1e-10);
                }
                _ => panic!("kernel kind changed"),
            }
            assert_eq!(
                model2.gps[0].sigma_u.lower().max_abs_diff(model.gps[0].sigma_u.lower()) < 1e-9,
                true
            );
            assert_eq!(spec2.b.len(), spec.b.len());
            for (x, y) in spec2.b.iter().zip(&spec.b) {
                assert_abs_diff_eq!(x[0], y[0], epsilon = 1e-10);
            }
            if !spec.a.is_empty() {
                assert_abs_diff_eq!(spec2.a[0].at(0, 0), spec.a[0].at(0, 0), epsilon = 1e-10);
                assert_abs_diff_eq!(spec2.s[0][0], spec.s[0][0], epsilon = 1e-10);
            }
            assert_eq!(spec2.chunk_dists.len(), spec.chunk_dists.len());
            for (x, y) in spec2.chunk_dists.iter().zip(&spec.chunk_dists) {
                assert_abs_diff_eq!(x.mean[0], y.mean[0], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn layout_names_cover_the_whole_vector() {
        let (model, spec) = toy_pair(PosteriorVariant::Vcdt);
        let structure = ModelStructure::infer(&model, &spec).unwrap();
        let layout = make_layout(&structure);
        let mut covered = vec![false; layout.total];
        for e in &layout.entries {
            for i in e.offset..e.offset + e.len {
                assert!(!covered[i], "overlap at {i} in {}", e.name);
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c), "gaps in layout");
        // groups sane
        assert!(layout.find("z").unwrap().group == ParamGroup::InducingInputs);
        assert!(layout.find("step.a").unwrap().group == ParamGroup::StepParams);
        assert!(ParamGroup::StepParams.is_variational());
        assert!(!ParamGroup::Kernel.is_variational());
    }

    #[test]
    fn prssm_layout_has_no_step_entries() {
        let (model, spec) = toy_pair(PosteriorVariant::Prssm { biased_independent_f: false });
        let structure = ModelStructure::infer(&model, &spec).unwrap();
        let layout = make_layout(&structure);
        assert!(layout.find("step.a").is_none());
        assert!(layout.find("step.b").is_none());
        assert!(layout.find("step.s").is_none());
    }

    #[test]
    fn chol_pack_unpack_round_trips() {
        let m = Mat::from_vec(2, 2, vec![4.0, 2.0, 2.0, 3.0]);
        let f = cholesky(&m).unwrap();
        let packed = repack_chol(&f);
        let back = unpack_chol(&packed, 2);
        assert!(back.lower().max_abs_diff(f.lower()) < 1e-10);
        let rec = back.reconstruct();
        assert!(rec.max_abs_diff(&m) < 1e-9);
    }
}
