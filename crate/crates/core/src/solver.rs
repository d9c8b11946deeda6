//! Shared driver for the block successive upper-bound minimization cycle.
//!
//! Both losses update `A`, `B`, `C` in turn, each time minimizing a
//! majorizer of the objective restricted to one factor. The per-loss pieces
//! live in [`crate::gaussian`] and [`crate::poisson`].

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, shape_err, ImputeError, Result};
use crate::model::FactorModel;
use crate::priors::{PreparedPrior, PriorSet};
use crate::tensor::{khatri_rao, Mask3, Mode, Tensor3};
use crate::{gaussian, poisson};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Gaussian,
    Poisson,
}

impl std::str::FromStr for Loss {
    type Err = ImputeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "ls" => Ok(Loss::Gaussian),
            "poisson" | "kl" => Ok(Loss::Poisson),
            other => input_err(format!("unknown loss family '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Regularization weight; equals the noise variance in the Gaussian model.
    pub mu: f64,
    /// Number of PARAFAC components carried by the solver.
    pub rank: usize,
    /// Stop when `|cost - cost_old| < tol * (1 + |cost|)`.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub loss: Loss,
    /// Keep `C` fixed at all-ones, turning the solver into matrix completion.
    pub freeze_c: bool,
}

impl SolveConfig {
    pub fn new(mu: f64, rank: usize) -> Self {
        Self {
            mu,
            rank,
            tol: 1e-8,
            max_iters: 500,
            seed: 0,
            loss: Loss::Gaussian,
            freeze_c: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_loss(mut self, loss: Loss) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_frozen_c(mut self, freeze: bool) -> Self {
        self.freeze_c = freeze;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return input_err(format!("mu must be positive and finite, got {}", self.mu));
        }
        if self.rank == 0 {
            return input_err("rank must be at least 1");
        }
        if !(self.tol > 0.0) {
            return input_err("tolerance must be positive");
        }
        if self.max_iters == 0 {
            return input_err("max_iters must be at least 1");
        }
        Ok(())
    }
}

/// Upper bound `min(MN, NP, PM)` on the rank of an `M x N x P` tensor.
pub fn rank_upper_bound((m, n, p): (usize, usize, usize)) -> usize {
    (m * n).min(n * p).min(p * m)
}

/// Default rank budget: twice the smallest dimension, capped at [`rank_upper_bound`].
pub fn default_rank(dims: (usize, usize, usize)) -> usize {
    (2 * dims.0.min(dims.1).min(dims.2)).min(rank_upper_bound(dims)).max(1)
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Objective at initialization followed by its value after every cycle.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_model: FactorModel,
    pub estimate: Tensor3,
    pub warnings: Vec<String>,
}

impl SolveReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace holds the initial cost")
    }

    /// Largest relative increase `(c[k+1] - c[k]) / (1 + |c[k]|)` over the trace.
    pub fn worst_ascent(&self) -> f64 {
        worst_ascent(&self.cost_trace)
    }
}

pub fn worst_ascent(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| (w[1] - w[0]) / (1.0 + w[0].abs()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Data and prior unfolded once per mode, shared by every block update.
pub(crate) struct Problem {
    pub dims: (usize, usize, usize),
    /// `(mode, Z unfolding, mask unfolding)` for Tube (A), Row (B), Column (C).
    pub unfoldings: [(Mode, DMatrix<f64>, DMatrix<f64>); 3],
    pub priors: [PreparedPrior; 3],
}

impl Problem {
    pub fn new(z: &Tensor3, mask: &Mask3, priors: &PriorSet) -> Result<Self> {
        let dims = z.dims();
        if mask.dims() != dims {
            return shape_err(format!("mask dims {:?} differ from data dims {:?}", mask.dims(), dims));
        }
        if priors.dims() != dims {
            return shape_err(format!(
                "prior dims {:?} differ from data dims {:?}",
                priors.dims(),
                dims
            ));
        }
        if mask.count() == 0 {
            return input_err("mask has no observed entries");
        }
        let zm = z.masked(mask)?;
        let dt = mask.to_tensor();
        let unf = |mode| (mode, zm.unfold(mode).matrix, dt.unfold(mode).matrix);
        Ok(Self {
            dims,
            unfoldings: [unf(Mode::Tube), unf(Mode::Row), unf(Mode::Column)],
            priors: priors.prepare()?,
        })
    }
}

/// Khatri-Rao product paired with the factor updated along `mode`.
pub fn block_khatri_rao(model: &FactorModel, mode: Mode) -> DMatrix<f64> {
    let kr = match mode {
        Mode::Tube => khatri_rao(&model.c, &model.b),
        Mode::Row => khatri_rao(&model.a, &model.c),
        Mode::Column => khatri_rao(&model.b, &model.a),
    };
    kr.expect("factor ranks agree")
}

fn factor_mut(model: &mut FactorModel, mode: Mode) -> &mut DMatrix<f64> {
    match mode {
        Mode::Tube => &mut model.a,
        Mode::Row => &mut model.b,
        Mode::Column => &mut model.c,
    }
}

pub(crate) fn gaussian_init(dims: (usize, usize, usize), cfg: &SolveConfig) -> FactorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |rows: usize| {
        DMatrix::from_fn(rows, cfg.rank, |_, _| StandardNormal.sample(&mut rng))
    };
    let a = draw(dims.0);
    let b = draw(dims.1);
    let c = if cfg.freeze_c {
        DMatrix::from_element(dims.2, cfg.rank, 1.0)
    } else {
        draw(dims.2)
    };
    FactorModel { a, b, c }
}

/// `|N(0,1)|` entries, then one common factor so the mean of the
/// reconstruction equals `target_mean`.
pub(crate) fn poisson_init(
    dims: (usize, usize, usize),
    cfg: &SolveConfig,
    target_mean: f64,
) -> FactorModel {
    let mut model = gaussian_init(dims, cfg);
    model.a.apply(|v| *v = v.abs());
    model.b.apply(|v| *v = v.abs());
    model.c.apply(|v| *v = v.abs());
    let x = model.reconstruct();
    let current = x.values().iter().sum::<f64>() / x.len() as f64;
    if current > 0.0 && target_mean > 0.0 {
        let s = target_mean / current;
        if cfg.freeze_c {
            let k = s.sqrt();
            model.a *= k;
            model.b *= k;
        } else {
            let k = s.cbrt();
            model.a *= k;
            model.b *= k;
            model.c *= k;
        }
    }
    model
}

/// Runs the BSUM cycle from `model` until convergence or the iteration cap.
pub(crate) fn run_cycle(
    problem: &Problem,
    mut model: FactorModel,
    cfg: &SolveConfig,
    warnings: Vec<String>,
) -> Result<SolveReport> {
    let cost_of = |m: &FactorModel| -> f64 {
        match cfg.loss {
            Loss::Gaussian => gaussian::cost_prepared(problem, m, cfg.mu),
            Loss::Poisson => poisson::cost_prepared(problem, m, cfg.mu),
        }
    };
    let mut trace = vec![cost_of(&model)];
    if !trace[0].is_finite() {
        return Err(ImputeError::Divergence(format!("initial cost is {}", trace[0])));
    }
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        for (k, (mode, z, delta)) in problem.unfoldings.iter().enumerate() {
            if cfg.freeze_c && *mode == Mode::Column {
                continue;
            }
            let pi = block_khatri_rao(&model, *mode);
            let prior = &problem.priors[k];
            let current = model.factor(*mode);
            let updated = match cfg.loss {
                Loss::Gaussian => gaussian::update_factor_gaussian(current, prior, &pi, delta, z, cfg.mu)?,
                Loss::Poisson => poisson::update_factor_poisson(current, prior, &pi, delta, z, cfg.mu)?,
            };
            *factor_mut(&mut model, *mode) = updated;
        }
        iterations += 1;
        let cost = cost_of(&model);
        if !cost.is_finite() {
            return Err(ImputeError::Divergence(format!(
                "cost became {cost} at iteration {iterations}"
            )));
        }
        let prev = *trace.last().unwrap();
        trace.push(cost);
        if (cost - prev).abs() < cfg.tol * (1.0 + cost.abs()) {
            converged = true;
            break;
        }
    }
    let estimate = model.reconstruct();
    Ok(SolveReport {
        cost_trace: trace,
        iterations,
        converged,
        final_model: model,
        estimate,
        warnings,
    })
}

/// Dispatches to [`gaussian::lrti_solve`] or [`poisson::lrpti_solve`].
pub fn solve(z: &Tensor3, mask: &Mask3, priors: &PriorSet, cfg: &SolveConfig) -> Result<SolveReport> {
    match cfg.loss {
        Loss::Gaussian => gaussian::lrti_solve(z, mask, priors, cfg),
        Loss::Poisson => poisson::lrpti_solve(z, mask, priors, cfg),
    }
}
