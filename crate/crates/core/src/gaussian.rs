//! Least-squares imputation (LRTI).
//!
//! Minimizes `1/2 |(Z - X) ∘ Δ|_F^2 + mu/2 [tr(A^T R_A^-1 A) + tr(B^T R_B^-1 B) + tr(C^T R_C^-1 C)]`
//! over PARAFAC factors. Each block step replaces `tr(A^T R^-1 A)` by the
//! isotropic bound `lambda |A|^2 - 2 tr(Θ^T A) + tr(Θ^T Ā)` with
//! `Θ = (lambda I - R^-1) Ā`, which decouples the rows of `A` into small
//! `R x R` ridge systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{ImputeError, Result};
use crate::model::FactorModel;
use crate::priors::{PreparedPrior, PriorSet};
use crate::solver::{gaussian_init, run_cycle, Problem, SolveConfig, SolveReport};
use crate::tensor::{Mask3, Tensor3};

/// Smallest `mu` for which the regularized least-squares solution is the zero tensor.
pub fn mu_max(z: &Tensor3, mask: &Mask3) -> Result<f64> {
    Ok(z.frobenius_sq(Some(mask))?.powf(2.0 / 3.0))
}

fn masked_residual_sq(f: &DMatrix<f64>, pi: &DMatrix<f64>, delta: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let x = f * pi.transpose();
    let mut acc = 0.0;
    for ((xv, zv), dv) in x.iter().zip(z.iter()).zip(delta.iter()) {
        if *dv != 0.0 {
            let r = zv - xv;
            acc += r * r;
        }
    }
    acc
}

/// Block objective in one factor: `1/2 |(Z - F Π^T) ∘ Δ|^2 + mu/2 tr(F^T R^-1 F)`.
pub fn gaussian_partial_cost(
    f: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> f64 {
    0.5 * masked_residual_sq(f, pi, delta, z) + 0.5 * mu * prior.quad_trace(f)
}

/// Majorizer of [`gaussian_partial_cost`] built at `f_bar`.
pub fn majorizer_gaussian_value(
    f: &DMatrix<f64>,
    f_bar: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> f64 {
    let theta = &prior.theta_base * f_bar;
    let fit = 0.5 * masked_residual_sq(f, pi, delta, z);
    fit + mu * (0.5 * prior.lambda * f.norm_squared() - theta.dot(f) + 0.5 * theta.dot(f_bar))
}

/// Exact minimizer of [`majorizer_gaussian_value`] over `F`, one row at a time:
/// `f_i = (Π^T D_i Π + lambda mu I)^-1 (Π^T D_i z_i + mu θ_i)`.
pub fn update_factor_gaussian(
    f_bar: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> Result<DMatrix<f64>> {
    let rows = f_bar.nrows();
    let rank = f_bar.ncols();
    if pi.ncols() != rank || delta.nrows() != rows || z.shape() != delta.shape() || pi.nrows() != delta.ncols() {
        return Err(ImputeError::Shape(format!(
            "update shapes: F {}x{}, Pi {}x{}, Delta {}x{}, Z {}x{}",
            rows,
            rank,
            pi.nrows(),
            pi.ncols(),
            delta.nrows(),
            delta.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    if prior.dim() != rows {
        return Err(ImputeError::Shape(format!(
            "prior is {}x{} but factor has {rows} rows",
            prior.dim(),
            prior.dim()
        )));
    }
    let theta = &prior.theta_base * f_bar;
    let ridge = prior.lambda * mu;
    let mut out = DMatrix::zeros(rows, rank);
    let mut gram = DMatrix::zeros(rank, rank);
    let mut rhs = DVector::zeros(rank);
    for i in 0..rows {
        gram.fill(0.0);
        for r in 0..rank {
            gram[(r, r)] = ridge;
            rhs[r] = mu * theta[(i, r)];
        }
        for k in 0..pi.nrows() {
            if delta[(i, k)] == 0.0 {
                continue;
            }
            let zk = z[(i, k)];
            for r in 0..rank {
                let pr = pi[(k, r)];
                rhs[r] += pr * zk;
                for s in r..rank {
                    gram[(r, s)] += pr * pi[(k, s)];
                }
            }
        }
        for r in 0..rank {
            for s in 0..r {
                gram[(r, s)] = gram[(s, r)];
            }
        }
        let chol = gram.clone().cholesky().ok_or_else(|| {
            ImputeError::Conditioning(format!("row system {i} is not positive definite"))
        })?;
        let sol = chol.solve(&rhs);
        out.set_row(i, &sol.transpose());
    }
    Ok(out)
}

pub(crate) fn cost_prepared(problem: &Problem, model: &FactorModel, mu: f64) -> f64 {
    let (_, z, delta) = &problem.unfoldings[0];
    let x = model.reconstruct();
    let mut fit = 0.0;
    for ((xv, zv), dv) in x.values().iter().zip(z.iter()).zip(delta.iter()) {
        if *dv != 0.0 {
            fit += (zv - xv) * (zv - xv);
        }
    }
    let [pa, pb, pc] = &problem.priors;
    0.5 * fit + 0.5 * mu * (pa.quad_trace(&model.a) + pb.quad_trace(&model.b) + pc.quad_trace(&model.c))
}

/// Regularized least-squares objective of a factor model against observed data.
pub fn gaussian_cost(z: &Tensor3, mask: &Mask3, f: &FactorModel, priors: &PriorSet, mu: f64) -> Result<f64> {
    check_model_dims(z, mask, f, priors)?;
    let x = f.reconstruct();
    let fit: f64 = z
        .values()
        .iter()
        .zip(x.values())
        .zip(mask.flags())
        .filter(|(_, &d)| d == 1)
        .map(|((zv, xv), _)| (zv - xv) * (zv - xv))
        .sum();
    let [pa, pb, pc] = priors.prepare()?;
    Ok(0.5 * fit + 0.5 * mu * (pa.quad_trace(&f.a) + pb.quad_trace(&f.b) + pc.quad_trace(&f.c)))
}

pub(crate) fn check_model_dims(z: &Tensor3, mask: &Mask3, f: &FactorModel, priors: &PriorSet) -> Result<()> {
    if f.dims() != z.dims() || mask.dims() != z.dims() || priors.dims() != z.dims() {
        return Err(ImputeError::Shape(format!(
            "dims disagree: data {:?}, mask {:?}, model {:?}, priors {:?}",
            z.dims(),
            mask.dims(),
            f.dims(),
            priors.dims()
        )));
    }
    Ok(())
}

/// Low-rank tensor imputation under Gaussian noise.
pub fn lrti_solve(z: &Tensor3, mask: &Mask3, priors: &PriorSet, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let problem = Problem::new(z, mask, priors)?;
    let init = gaussian_init(problem.dims, cfg);
    run_cycle(&problem, init, cfg, Vec::new())
}

/// Same as [`lrti_solve`] but starting from caller-supplied factors.
pub fn lrti_solve_from(
    z: &Tensor3,
    mask: &Mask3,
    priors: &PriorSet,
    cfg: &SolveConfig,
    init: FactorModel,
) -> Result<SolveReport> {
    cfg.validate()?;
    let problem = Problem::new(z, mask, priors)?;
    if init.dims() != problem.dims || init.rank() != cfg.rank {
        return Err(ImputeError::Shape("initial model does not match data and rank".into()));
    }
    run_cycle(&problem, init, cfg, Vec::new())
}
