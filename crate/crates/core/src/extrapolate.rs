//! Kernel-based prediction at arbitrary index triples, including indices the
//! solver never saw.
//!
//! With kernels `K_M`, `K_N`, `K_P` used as prior covariances, the fitted
//! tensor is the grid restriction of
//!
//! ```text
//! f(m, n, p) = sum_r (k_M(m)^T K_M^-1 a_r) (k_N(n)^T K_N^-1 b_r) (k_P(p)^T K_P^-1 c_r)
//! ```
//!
//! where `k_M(m)` holds the similarities between `m` and every in-sample row
//! index. For an in-sample `m` this vector is a column of `K_M`, and the
//! expression collapses to the solver's estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{input_err, shape_err, Result};
use crate::gaussian::lrti_solve;
use crate::model::FactorModel;
use crate::priors::{KernelSet, PreparedPrior, PriorSet};
use crate::solver::{SolveConfig, SolveReport};
use crate::tensor::{Mask3, Mode, Tensor3};

/// Fitted factors together with the kernels that regularized them.
#[derive(Clone, Debug)]
pub struct KernelEvaluator {
    pub factors: FactorModel,
    pub kernels: KernelSet,
    /// Regularized inverses of `K_M`, `K_N`, `K_P`.
    pub inverses: [DMatrix<f64>; 3],
    /// `K^-1 A`, `K^-1 B`, `K^-1 C`, the coefficients of the kernel expansion.
    coefficients: [DMatrix<f64>; 3],
}

impl KernelEvaluator {
    pub fn new(factors: FactorModel, kernels: KernelSet) -> Result<Self> {
        let dims = factors.dims();
        let kdims = (kernels.m.nrows(), kernels.n.nrows(), kernels.p.nrows());
        if kdims != dims {
            return shape_err(format!("kernel dims {kdims:?} differ from factor dims {dims:?}"));
        }
        let inverses = [
            PreparedPrior::new(&kernels.m)?.inverse,
            PreparedPrior::new(&kernels.n)?.inverse,
            PreparedPrior::new(&kernels.p)?.inverse,
        ];
        let coefficients = [
            &inverses[0] * &factors.a,
            &inverses[1] * &factors.b,
            &inverses[2] * &factors.c,
        ];
        Ok(Self {
            factors,
            kernels,
            inverses,
            coefficients,
        })
    }

    /// Prediction for the index triple described by the cross-similarity
    /// vectors `k_m` (length `M`), `k_n` (length `N`) and `k_p` (length `P`).
    pub fn evaluate(&self, k_m: &DVector<f64>, k_n: &DVector<f64>, k_p: &DVector<f64>) -> Result<f64> {
        let dims = self.factors.dims();
        let lens = (k_m.len(), k_n.len(), k_p.len());
        if lens != dims {
            return shape_err(format!("kernel vector lengths {lens:?} differ from dims {dims:?}"));
        }
        let u = self.coefficients[0].tr_mul(k_m);
        let v = self.coefficients[1].tr_mul(k_n);
        let w = self.coefficients[2].tr_mul(k_p);
        Ok(u.component_mul(&v).dot(&w))
    }

    /// Prediction at an in-sample grid point, using the kernel columns as
    /// similarity vectors.
    pub fn evaluate_in_sample(&self, m: usize, n: usize, p: usize) -> Result<f64> {
        let k_m = self.kernels.m.column(m).into_owned();
        let k_n = self.kernels.n.column(n).into_owned();
        let k_p = self.kernels.p.column(p).into_owned();
        self.evaluate(&k_m, &k_n, &k_p)
    }

    /// [`Self::evaluate_in_sample`] over the whole grid.
    pub fn evaluate_grid(&self) -> Tensor3 {
        let ka = self.kernels.m.tr_mul(&self.coefficients[0]);
        let kb = self.kernels.n.tr_mul(&self.coefficients[1]);
        let kc = self.kernels.p.tr_mul(&self.coefficients[2]);
        FactorModel { a: ka, b: kb, c: kc }.reconstruct()
    }
}

/// Estimate of a slice that carries no observations, with the solver run
/// that produced it.
#[derive(Clone, Debug)]
pub struct SliceRecovery {
    pub slice: DMatrix<f64>,
    pub report: SolveReport,
}

/// Fits `z` under the informative `priors` and returns the predicted slice
/// `index` along `mode`. The slice must be entirely unobserved in `mask`.
pub fn recover_missing_slice(
    z: &Tensor3,
    mask: &Mask3,
    priors: &PriorSet,
    cfg: &SolveConfig,
    index: usize,
    mode: Mode,
) -> Result<SliceRecovery> {
    if z.dims().2 == 1 {
        return input_err("slice extrapolation needs a third mode with more than one slice");
    }
    if !mask.slice_unobserved(mode, index)? {
        return input_err(format!(
            "{mode} slice {index} has observed entries; use plain imputation instead"
        ));
    }
    let report = lrti_solve(z, mask, priors, cfg)?;
    let slice = report.estimate.slice(mode, index)?;
    Ok(SliceRecovery { slice, report })
}
