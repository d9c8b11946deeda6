//! Poisson count imputation (LRPTI).
//!
//! Minimizes `sum δ (x - z log x) + mu/2 [tr(A^T R_A^-1 A) + ...]` over
//! nonnegative PARAFAC factors. The block majorizer combines the isotropic
//! bound on the prior term with Jensen's inequality on `log(sum_r a_r π_r)`
//! (weights `w_r = ā_r π_r / x̄`), which makes it separable per entry:
//!
//! `g(A, Ā) = mu lambda sum_{m,r} (a^2/2 - 2 t a - s log a + u)`
//!
//! minimized in closed form at `a = t + sqrt(t^2 + s)`.

use nalgebra::DMatrix;

use crate::error::{input_err, ImputeError, Result};
use crate::gaussian::check_model_dims;
use crate::model::FactorModel;
use crate::priors::{PreparedPrior, PriorSet};
use crate::solver::{poisson_init, run_cycle, Problem, SolveConfig, SolveReport};
use crate::tensor::{Mask3, Tensor3};

/// Lower clamp on `sum_r ā_r π_r` before dividing by it.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Per-entry coefficients of the separable majorizer.
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonMajorizerParams {
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Constant term; only needed to evaluate `g`, not to minimize it.
    pub u: DMatrix<f64>,
    pub lambda: f64,
    pub mu: f64,
}

#[inline]
fn kl_term(x: f64, z: f64) -> f64 {
    if z == 0.0 {
        x
    } else if x > 0.0 {
        x - z * x.ln()
    } else {
        f64::INFINITY
    }
}

fn kl_fit(f: &DMatrix<f64>, pi: &DMatrix<f64>, delta: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    let x = f * pi.transpose();
    x.iter()
        .zip(z.iter())
        .zip(delta.iter())
        .filter(|(_, d)| **d != 0.0)
        .map(|((xv, zv), _)| kl_term(*xv, *zv))
        .sum()
}

/// Block objective in one factor: `sum δ (x - z log x) + mu/2 tr(F^T R^-1 F)`
/// with `x = F Π^T`. Returns `+inf` when some `x = 0` meets a positive count.
pub fn poisson_partial_cost(
    f: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> f64 {
    kl_fit(f, pi, delta, z) + 0.5 * mu * prior.quad_trace(f)
}

fn check_shapes(f_bar: &DMatrix<f64>, prior: &PreparedPrior, pi: &DMatrix<f64>, delta: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    let ok = pi.ncols() == f_bar.ncols()
        && delta.nrows() == f_bar.nrows()
        && z.shape() == delta.shape()
        && pi.nrows() == delta.ncols()
        && prior.dim() == f_bar.nrows();
    if !ok {
        return Err(ImputeError::Shape(format!(
            "update shapes: F {:?}, prior {}, Pi {:?}, Delta {:?}, Z {:?}",
            f_bar.shape(),
            prior.dim(),
            pi.shape(),
            delta.shape(),
            z.shape()
        )));
    }
    if f_bar.iter().any(|&v| v < 0.0) {
        return input_err("Poisson factors must be nonnegative");
    }
    Ok(())
}

/// Builds `s`, `t`, `u` at the current factor `f_bar`.
pub fn poisson_majorizer_params(
    f_bar: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> Result<PoissonMajorizerParams> {
    check_shapes(f_bar, prior, pi, delta, z)?;
    let (rows, rank) = f_bar.shape();
    let lm = prior.lambda * mu;
    let theta = &prior.theta_base * f_bar;
    // Σ_k δ_ik π_kr
    let exposure = delta * pi;
    let x_bar = f_bar * pi.transpose();
    let mut s = DMatrix::zeros(rows, rank);
    let mut jensen = DMatrix::zeros(rows, rank);
    for i in 0..rows {
        for k in 0..pi.nrows() {
            let zk = z[(i, k)];
            if delta[(i, k)] == 0.0 || zk == 0.0 {
                continue;
            }
            let denom = x_bar[(i, k)].max(DENOMINATOR_FLOOR);
            for r in 0..rank {
                let a = f_bar[(i, r)];
                if a == 0.0 {
                    continue;
                }
                let w = a * pi[(k, r)] / denom;
                s[(i, r)] += zk * w;
                jensen[(i, r)] += zk * w * (a / denom).ln();
            }
        }
    }
    s /= lm;
    let t = (&theta * mu - exposure) / (2.0 * lm);
    let u = (theta.component_mul(f_bar) * (0.5 * mu) + jensen) / lm;
    Ok(PoissonMajorizerParams {
        s,
        t,
        u,
        lambda: prior.lambda,
        mu,
    })
}

/// The constant term exactly as it is sometimes printed,
/// `(1/λμ)(θ ā + Σ_k δ z ā π log(ā π / x̄) / x̄)`. Kept for comparison only:
/// it does not make the majorizer touch the objective at `ā`.
pub fn printed_u_constant(
    f_bar: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> DMatrix<f64> {
    let (rows, rank) = f_bar.shape();
    let lm = prior.lambda * mu;
    let theta = &prior.theta_base * f_bar;
    let x_bar = f_bar * pi.transpose();
    DMatrix::from_fn(rows, rank, |i, r| {
        let a = f_bar[(i, r)];
        let mut acc = theta[(i, r)] * a;
        for k in 0..pi.nrows() {
            let zk = z[(i, k)];
            if delta[(i, k)] == 0.0 || zk == 0.0 || a == 0.0 {
                continue;
            }
            let denom = x_bar[(i, k)].max(DENOMINATOR_FLOOR);
            let v = (a * pi[(k, r)] / denom).ln() / denom;
            acc += zk * a * pi[(k, r)] * v;
        }
        acc / lm
    })
}

/// `t + sqrt(t^2 + s)`, written to avoid cancellation when `t < 0`.
#[inline]
pub fn closed_form_root(t: f64, s: f64) -> f64 {
    let root = (t * t + s).sqrt();
    if t >= 0.0 {
        t + root
    } else if s == 0.0 {
        0.0
    } else {
        s / (root - t)
    }
}

/// Minimizer of the separable majorizer: `a_mr = t_mr + sqrt(t_mr^2 + s_mr)`.
pub fn update_factor_poisson(
    f_bar: &DMatrix<f64>,
    prior: &PreparedPrior,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
) -> Result<DMatrix<f64>> {
    let params = poisson_majorizer_params(f_bar, prior, pi, delta, z, mu)?;
    Ok(params.t.zip_map(&params.s, closed_form_root))
}

/// `mu lambda sum (a^2/2 - 2 t a - s log a + u)`; `+inf` if `a <= 0` where `s > 0`.
pub fn majorizer_poisson_value(f: &DMatrix<f64>, params: &PoissonMajorizerParams) -> f64 {
    let mut acc = 0.0;
    for (((a, s), t), u) in f.iter().zip(params.s.iter()).zip(params.t.iter()).zip(params.u.iter()) {
        let log_part = if *s > 0.0 {
            if *a <= 0.0 {
                return f64::INFINITY;
            }
            s * a.ln()
        } else {
            0.0
        };
        acc += 0.5 * a * a - 2.0 * t * a - log_part + u;
    }
    params.mu * params.lambda * acc
}

pub(crate) fn cost_prepared(problem: &Problem, model: &FactorModel, mu: f64) -> f64 {
    let (_, z, delta) = &problem.unfoldings[0];
    let x = model.reconstruct();
    let fit: f64 = x
        .values()
        .iter()
        .zip(z.iter())
        .zip(delta.iter())
        .filter(|(_, d)| **d != 0.0)
        .map(|((xv, zv), _)| kl_term(*xv, *zv))
        .sum();
    let [pa, pb, pc] = &problem.priors;
    fit + 0.5 * mu * (pa.quad_trace(&model.a) + pb.quad_trace(&model.b) + pc.quad_trace(&model.c))
}

/// Regularized Kullback-Leibler objective of a factor model against observed counts.
pub fn kl_cost(z: &Tensor3, mask: &Mask3, f: &FactorModel, priors: &PriorSet, mu: f64) -> Result<f64> {
    check_model_dims(z, mask, f, priors)?;
    let x = f.reconstruct();
    let fit: f64 = z
        .values()
        .iter()
        .zip(x.values())
        .zip(mask.flags())
        .filter(|(_, &d)| d == 1)
        .map(|((zv, xv), _)| kl_term(*xv, *zv))
        .sum();
    let [pa, pb, pc] = priors.prepare()?;
    Ok(fit + 0.5 * mu * (pa.quad_trace(&f.a) + pb.quad_trace(&f.b) + pc.quad_trace(&f.c)))
}

/// Checks observed counts; negative values are errors, fractional ones produce a warning.
pub fn validate_counts(z: &Tensor3, mask: &Mask3) -> Result<Vec<String>> {
    let mut fractional = 0usize;
    for (v, &d) in z.values().iter().zip(mask.flags()) {
        if d == 0 {
            continue;
        }
        if *v < 0.0 {
            return input_err(format!("Poisson data must be nonnegative, found {v}"));
        }
        if v.fract() != 0.0 {
            fractional += 1;
        }
    }
    Ok(if fractional > 0 {
        vec![format!("{fractional} observed entries are not integers; treated as rates")]
    } else {
        Vec::new()
    })
}

/// Low-rank imputation of Poisson counts.
pub fn lrpti_solve(z: &Tensor3, mask: &Mask3, priors: &PriorSet, cfg: &SolveConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let problem = Problem::new(z, mask, priors)?;
    let warnings = validate_counts(z, mask)?;
    let total: f64 = z.values().iter().zip(mask.flags()).filter(|(_, &d)| d == 1).map(|(v, _)| *v).sum();
    let observed_mean = total / mask.count() as f64;
    let init = poisson_init(problem.dims, cfg, observed_mean.max(DENOMINATOR_FLOOR));
    run_cycle(&problem, init, cfg, warnings)
}
