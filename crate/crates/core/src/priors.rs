//! Prior covariances `R_A`, `R_B`, `R_C`, their kernel counterparts, and
//! moment-based estimation of both from training tensors.
//!
//! Kernels and priors are related by `K = R * theta^2 * R_prior`, where `R` is
//! the PARAFAC rank and `theta` the common trace of the priors. Summing the
//! diagonal of any kernel gives `E |X|_F^2 = R * theta^3`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{input_err, shape_err, ImputeError, Result};
use crate::tensor::{Mode, Tensor3};

/// Relative size of the diagonal jitter, as a fraction of `trace / dim`.
pub const SPD_JITTER: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-10;

fn is_diagonal(r: &DMatrix<f64>) -> bool {
    (0..r.nrows()).all(|i| (0..r.ncols()).all(|j| i == j || r[(i, j)] == 0.0))
}

fn symmetric_eigenvalues(r: &DMatrix<f64>) -> Vec<f64> {
    if is_diagonal(r) {
        r.diagonal().iter().copied().collect()
    } else {
        SymmetricEigen::new(r.clone()).eigenvalues.iter().copied().collect()
    }
}

/// Symmetrizes `r` and adds `SPD_JITTER * trace / dim * I` when its smallest
/// eigenvalue falls below that amount. Fails if the result is still not
/// positive definite.
pub fn regularize_spd(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !r.is_square() || r.nrows() == 0 {
        return shape_err(format!("covariance must be square, got {}x{}", r.nrows(), r.ncols()));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return input_err("covariance has non-finite entries");
    }
    let scale = r.amax().max(1.0);
    if (r - r.transpose()).amax() > SYMMETRY_TOL * scale {
        return input_err("covariance matrix is not symmetric");
    }
    let mut out = (r + r.transpose()) * 0.5;
    let dim = out.nrows() as f64;
    let jitter = SPD_JITTER * (out.trace() / dim).abs();
    let min_eig = symmetric_eigenvalues(&out).into_iter().fold(f64::INFINITY, f64::min);
    if min_eig < jitter {
        for i in 0..out.nrows() {
            out[(i, i)] += jitter;
        }
        let min_after = symmetric_eigenvalues(&out).into_iter().fold(f64::INFINITY, f64::min);
        if !(min_after > 0.0) {
            return Err(ImputeError::Conditioning(format!(
                "covariance is not positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
    }
    Ok(out)
}

/// Inverse of a regularized SPD matrix together with the quantities the
/// majorizers need: `lambda = lambda_max(R^-1)` and `lambda I - R^-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPrior {
    pub inverse: DMatrix<f64>,
    pub lambda: f64,
    pub theta_base: DMatrix<f64>,
}

impl PreparedPrior {
    pub fn new(r: &DMatrix<f64>) -> Result<Self> {
        let r = regularize_spd(r)?;
        let dim = r.nrows();
        let inverse = if is_diagonal(&r) {
            DMatrix::from_diagonal(&r.diagonal().map(|d| 1.0 / d))
        } else {
            let eig = SymmetricEigen::new(r);
            let inv_vals = eig.eigenvalues.map(|e| 1.0 / e);
            let v = &eig.eigenvectors;
            let inv = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
            (&inv + inv.transpose()) * 0.5
        };
        let lambda = if is_diagonal(&inverse) {
            inverse.diagonal().max()
        } else {
            SymmetricEigen::new(inverse.clone()).eigenvalues.max()
        };
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(ImputeError::Conditioning(format!(
                "largest eigenvalue of the inverse prior is {lambda}"
            )));
        }
        let theta_base = DMatrix::identity(dim, dim) * lambda - &inverse;
        Ok(Self {
            inverse,
            lambda,
            theta_base,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inverse: DMatrix::identity(dim, dim),
            lambda: 1.0,
            theta_base: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.inverse.nrows()
    }

    /// `trace(F^T R^-1 F)`.
    pub fn quad_trace(&self, f: &DMatrix<f64>) -> f64 {
        (f.transpose() * &self.inverse * f).trace()
    }
}

/// `lambda = lambda_max(R^-1)` and the PSD matrix `lambda I - R^-1`.
pub fn max_eig_inverse(r: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let prepared = PreparedPrior::new(r)?;
    Ok((prepared.lambda, prepared.theta_base))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSet {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl PriorSet {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("R_A", &a), ("R_B", &b), ("R_C", &c)] {
            regularize_spd(m).map_err(|e| match e {
                ImputeError::Input(msg) => ImputeError::Input(format!("{name}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self { a, b, c })
    }

    /// Identity priors reduce the MAP objective to plain Frobenius-norm
    /// regularization. Their traces are `M`, `N`, `P`, so no common `theta` exists.
    pub fn identity(m: usize, n: usize, p: usize) -> Self {
        Self {
            a: DMatrix::identity(m, m),
            b: DMatrix::identity(n, n),
            c: DMatrix::identity(p, p),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn get(&self, mode: Mode) -> &DMatrix<f64> {
        match mode {
            Mode::Tube => &self.a,
            Mode::Row => &self.b,
            Mode::Column => &self.c,
        }
    }

    pub fn traces(&self) -> [f64; 3] {
        [self.a.trace(), self.b.trace(), self.c.trace()]
    }

    /// Common trace when all three agree to within `1e-8` relative.
    pub fn theta(&self) -> Option<f64> {
        let [ta, tb, tc] = self.traces();
        let hi = ta.max(tb).max(tc);
        let lo = ta.min(tb).min(tc);
        (hi - lo <= 1e-8 * hi.abs()).then_some((ta + tb + tc) / 3.0)
    }

    /// Rescales every prior to the geometric mean of the three traces.
    pub fn calibrate_equal_power(&self) -> PriorSet {
        let [ta, tb, tc] = self.traces();
        let theta = (ta * tb * tc).cbrt();
        PriorSet {
            a: &self.a * (theta / ta),
            b: &self.b * (theta / tb),
            c: &self.c * (theta / tc),
        }
    }

    /// `K = rank * theta^2 * R` per mode.
    pub fn to_kernels(&self, rank: usize, theta: f64) -> KernelSet {
        let s = rank as f64 * theta * theta;
        KernelSet {
            m: &self.a * s,
            n: &self.b * s,
            p: &self.c * s,
            source: KernelSource::Given,
        }
    }

    pub fn prepare(&self) -> Result<[PreparedPrior; 3]> {
        let prep = |m: &DMatrix<f64>| {
            if is_identity(m) {
                Ok(PreparedPrior::identity(m.nrows()))
            } else {
                PreparedPrior::new(m)
            }
        };
        Ok([prep(&self.a)?, prep(&self.b)?, prep(&self.c)?])
    }
}

fn is_identity(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)] == if i == j { 1.0 } else { 0.0 }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSource {
    Given,
    Estimated,
}

/// Similarity matrices over the row, column and tube index sets.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet {
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub source: KernelSource,
}

impl KernelSet {
    pub fn identity(m: usize, n: usize, p: usize) -> Self {
        Self {
            m: DMatrix::identity(m, m),
            n: DMatrix::identity(n, n),
            p: DMatrix::identity(p, p),
            source: KernelSource::Given,
        }
    }

    /// `R = K / (rank * theta^2)` per mode.
    pub fn to_priors(&self, rank: usize, theta: f64) -> PriorSet {
        let s = 1.0 / (rank as f64 * theta * theta);
        PriorSet {
            a: &self.m * s,
            b: &self.n * s,
            c: &self.p * s,
        }
    }

    /// Uses the kernels directly as prior covariances, which is what the
    /// kernelized objective penalizes.
    pub fn as_priors(&self) -> PriorSet {
        PriorSet {
            a: self.m.clone(),
            b: self.n.clone(),
            c: self.p.clone(),
        }
    }
}

/// Estimated kernels and priors, with the fitted power level.
#[derive(Clone, Debug)]
pub struct PriorEstimate {
    pub kernels: KernelSet,
    pub priors: PriorSet,
    pub theta: f64,
    pub mean_energy: f64,
}

/// Sample-moment estimates of the slice covariances and of `theta`.
///
/// `K_P(p, p')` is the average of `trace(X_p^T X_p')` over the samples (and
/// likewise for the other modes). `theta` solves `mean |X|^2 = rank_hint * theta^3`.
pub fn estimate_kernels(samples: &[Tensor3], rank_hint: usize) -> Result<PriorEstimate> {
    let first = samples
        .first()
        .ok_or_else(|| ImputeError::Input("no training samples given".into()))?;
    if rank_hint == 0 {
        return input_err("rank hint must be at least 1");
    }
    let dims = first.dims();
    let (m, n, p) = dims;
    let mut km = DMatrix::zeros(m, m);
    let mut kn = DMatrix::zeros(n, n);
    let mut kp = DMatrix::zeros(p, p);
    let mut energy = 0.0;
    for s in samples {
        if s.dims() != dims {
            return shape_err(format!("sample dims {:?} differ from {:?}", s.dims(), dims));
        }
        let xt = s.tube_unfolding_view();
        km += xt * xt.transpose();
        let xr = s.unfold(Mode::Row).matrix;
        kn += &xr * xr.transpose();
        let xc = s.unfold(Mode::Column).matrix;
        kp += &xc * xc.transpose();
        energy += s.frobenius_sq(None)?;
    }
    let count = samples.len() as f64;
    km /= count;
    kn /= count;
    kp /= count;
    let mean_energy = energy / count;
    let theta = (mean_energy / rank_hint as f64).cbrt();
    if !(theta > 0.0) {
        return Err(ImputeError::Conditioning(
            "training samples have zero energy, theta estimate is 0".into(),
        ));
    }
    let raw = KernelSet {
        m: km,
        n: kn,
        p: kp,
        source: KernelSource::Estimated,
    }
    .to_priors(rank_hint, theta);
    let jittered = PriorSet {
        a: regularize_spd(&raw.a)?,
        b: regularize_spd(&raw.b)?,
        c: regularize_spd(&raw.c)?,
    };
    let priors = jittered.calibrate_equal_power();
    let theta = priors.a.trace();
    let mut kernels = priors.to_kernels(rank_hint, theta);
    kernels.source = KernelSource::Estimated;
    Ok(PriorEstimate {
        kernels,
        priors,
        theta,
        mean_energy,
    })
}

/// Draws an `rows x rank` factor whose columns are i.i.d. `N(0, cov)`.
pub fn draw_factor<G: Rng + ?Sized>(rng: &mut G, cov: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    let white = DMatrix::from_fn(dim, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    if is_identity(cov) {
        return Ok(white);
    }
    let cov = regularize_spd(cov)?;
    let chol = cov
        .cholesky()
        .ok_or_else(|| ImputeError::Conditioning("prior covariance has no Cholesky factor".into()))?;
    Ok(chol.l() * white)
}
