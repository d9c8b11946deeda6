//! Imputation of missing entries in three-way tensors with rank-regularized
//! PARAFAC models.
//!
//! Two solvers share the same block-cyclic structure:
//!
//! * [`lrti_solve`] fits real-valued data under Gaussian noise;
//! * [`lrpti_solve`] fits nonnegative counts under a Poisson likelihood.
//!
//! Both accept prior covariances for the factor columns ([`PriorSet`]), which
//! can be given, estimated from training tensors ([`estimate_kernels`]), or
//! left as identities for plain Frobenius-norm regularization.

pub mod cli;
pub mod error;
pub mod extrapolate;
pub mod gaussian;
pub mod io;
pub mod model;
pub mod poisson;
pub mod priors;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{ImputeError, Result};
pub use extrapolate::{recover_missing_slice, KernelEvaluator, SliceRecovery};
pub use gaussian::{gaussian_cost, lrti_solve, majorizer_gaussian_value, mu_max, update_factor_gaussian};
pub use model::{FactorModel, NormalizedModel, DEFAULT_RANK_TOL, NULL_COMPONENT_TOL};
pub use poisson::{
    kl_cost, lrpti_solve, majorizer_poisson_value, poisson_majorizer_params, update_factor_poisson,
    PoissonMajorizerParams,
};
pub use priors::{estimate_kernels, max_eig_inverse, KernelSet, KernelSource, PreparedPrior, PriorEstimate, PriorSet};
pub use solver::{solve, Loss, SolveConfig, SolveReport};
pub use tensor::{khatri_rao, parafac_reconstruct, Dims, Mask3, Mode, Tensor3, Unfolding};
