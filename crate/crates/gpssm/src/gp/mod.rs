//! Gaussian-process machinery: kernels and mean functions, exact sequential
//! conditioning, and the sparse variational approximation.

pub mod conditioning;
pub mod kernel;
pub mod sparse;

pub use conditioning::{
    extend_conditioning_state, gp_prior_conditional, ConditioningState, CovModel, PriorCov,
    SparsePosteriorCov, DUPLICATE_TOL,
};
pub use kernel::{kernel_gram_psd, kernel_matrix, kink_response, Kernel, MeanFunction};
pub use sparse::{kl_qu_pu, SparseConditional, SparseGp, SparseGpCache};
