//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written from the definitions, with dense linear algebra
//! and no shortcuts, so it can serve as an oracle for the optimized code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tensor_impute::gaussian::gaussian_partial_cost;
use tensor_impute::poisson::poisson_partial_cost;
use tensor_impute::solver::block_khatri_rao;
use tensor_impute::{
    majorizer_gaussian_value, majorizer_poisson_value, poisson_majorizer_params, FactorModel, Mask3, Mode,
    PreparedPrior, PriorSet, Tensor3,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn positive_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.2..2.0))
}

/// `G G^T / dim + 0.1 I`, comfortably positive definite and not diagonal.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let g = normal_matrix(rng, dim, dim);
    &g * g.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1
}

pub fn random_mask(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), observed: f64) -> Mask3 {
    let mut mask = Mask3::from_fn(dims, |_, _, _| rng.random_bool(observed));
    if mask.count() == 0 {
        mask.set(0, 0, 0, true);
    }
    mask
}

pub fn random_model(rng: &mut ChaCha8Rng, dims: (usize, usize, usize), rank: usize) -> FactorModel {
    FactorModel {
        a: normal_matrix(rng, dims.0, rank),
        b: normal_matrix(rng, dims.1, rank),
        c: normal_matrix(rng, dims.2, rank),
    }
}

/// `lambda_max(R^-1) = 1 / lambda_min(R)` from a plain eigendecomposition.
pub fn lambda_of(r: &DMatrix<f64>) -> f64 {
    1.0 / SymmetricEigen::new(r.clone()).eigenvalues.min()
}

pub fn inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    r.clone().try_inverse().expect("invertible")
}

/// `vec(X_p) = Q_p vec(A)` with `Q_p = (B Diag(c_p)) ⊗ I_M`.
pub fn q_matrix(b: &DMatrix<f64>, c: &DMatrix<f64>, p: usize, m: usize) -> DMatrix<f64> {
    let bc = b * DMatrix::from_diagonal(&c.row(p).transpose());
    bc.kronecker(&DMatrix::identity(m, m))
}

fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn frontal_slice(t: &Tensor3, p: usize) -> DMatrix<f64> {
    let (m, n, _) = t.dims();
    DMatrix::from_fn(m, n, |i, j| t.get(i, j, p))
}

fn frontal_mask(mask: &Mask3, p: usize) -> DVector<f64> {
    let (m, n, _) = mask.dims();
    DVector::from_fn(m * n, |k, _| if mask.get(k % m, k / m, p) { 1.0 } else { 0.0 })
}

/// Objective written in terms of `a = vec(A)`, slice by slice:
/// `1/2 sum_p |D_p (vec Z_p - Q_p a)|^2 + mu/2 [a^T (I ⊗ R_A^-1) a + tr(B^T R_B^-1 B) + tr(C^T R_C^-1 C)]`.
pub fn dense_gaussian_cost(z: &Tensor3, mask: &Mask3, f: &FactorModel, priors: &PriorSet, mu: f64) -> f64 {
    let (m, _, p_dim) = z.dims();
    let rank = f.rank();
    let a = vec_of(&f.a);
    let mut fit = 0.0;
    for p in 0..p_dim {
        let q = q_matrix(&f.b, &f.c, p, m);
        let r = vec_of(&frontal_slice(z, p)) - q * &a;
        fit += r.component_mul(&frontal_mask(mask, p)).norm_squared();
    }
    let big_inv = DMatrix::<f64>::identity(rank, rank).kronecker(&inverse(&priors.a));
    let pen_a = a.dot(&(big_inv * &a));
    let pen_b = (f.b.transpose() * inverse(&priors.b) * &f.b).trace();
    let pen_c = (f.c.transpose() * inverse(&priors.c) * &f.c).trace();
    0.5 * fit + 0.5 * mu * (pen_a + pen_b + pen_c)
}

/// Minimizer over `A` of the vectorized majorizer
/// `1/2 sum_p |D_p (z_p - Q_p a)|^2 + mu (lambda/2 |a|^2 - θ^T a)`, `θ = vec((lambda I - R^-1) Ā)`,
/// obtained from one dense `MR x MR` solve.
pub fn dense_gaussian_block_minimizer(
    z: &Tensor3,
    mask: &Mask3,
    a_bar: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r_a: &DMatrix<f64>,
    mu: f64,
) -> DMatrix<f64> {
    let (m, _, p_dim) = z.dims();
    let rank = a_bar.ncols();
    let lambda = lambda_of(r_a);
    let theta = (DMatrix::identity(m, m) * lambda - inverse(r_a)) * a_bar;
    let mut lhs = DMatrix::identity(m * rank, m * rank) * (lambda * mu);
    let mut rhs = vec_of(&theta) * mu;
    for p in 0..p_dim {
        let q = q_matrix(b, c, p, m);
        let d = DMatrix::from_diagonal(&frontal_mask(mask, p));
        lhs += q.transpose() * &d * &q;
        rhs += q.transpose() * &d * vec_of(&frontal_slice(z, p));
    }
    let a = lhs.lu().solve(&rhs).expect("nonsingular");
    DMatrix::from_column_slice(m, rank, a.as_slice())
}

/// Golden-section search for the minimizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, x_tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > x_tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Minimizes the Poisson block majorizer for entry `(m, r)` numerically,
/// building the one-dimensional function directly from Jensen's bound:
/// `mu lambda/2 a^2 - mu θ a + sum_j δ π_jr a - sum_j δ z w_mjr log a`.
pub fn poisson_entry_minimizer(
    a_bar: &DMatrix<f64>,
    r_prior: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    delta: &DMatrix<f64>,
    z: &DMatrix<f64>,
    mu: f64,
    (m, r): (usize, usize),
) -> f64 {
    let lambda = lambda_of(r_prior);
    let dim = a_bar.nrows();
    let theta = (DMatrix::identity(dim, dim) * lambda - inverse(r_prior)) * a_bar;
    let mut linear = -mu * theta[(m, r)];
    let mut log_coef = 0.0;
    for j in 0..pi.nrows() {
        if delta[(m, j)] == 0.0 {
            continue;
        }
        let x_bar: f64 = (0..a_bar.ncols()).map(|k| a_bar[(m, k)] * pi[(j, k)]).sum::<f64>().max(1e-12);
        linear += pi[(j, r)];
        log_coef += z[(m, j)] * a_bar[(m, r)] * pi[(j, r)] / x_bar;
    }
    let h = |a: f64| {
        let log_term = if log_coef > 0.0 { log_coef * a.ln() } else { 0.0 };
        0.5 * mu * lambda * a * a + linear * a - log_term
    };
    let mut hi = 1.0;
    while h(2.0 * hi) < h(hi) {
        hi *= 2.0;
    }
    golden_section(h, 0.0, 2.0 * hi, 1e-12 * (1.0 + hi))
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&DMatrix<f64>) -> f64, x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    for k in 0..x.len() {
        let step = h * (1.0 + x[k].abs());
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += step;
        minus[k] -= step;
        grad[k] = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    grad
}

/// Results of checking the three majorizer properties on one random instance.
#[derive(Debug, Clone, Copy)]
pub struct MajorizerCheck {
    /// `|g(Ā, Ā) - f(Ā)| / (1 + |f(Ā)|)`.
    pub tightness: f64,
    /// `|∇g(Ā) - ∇f(Ā)| / |∇f(Ā)|` by central differences.
    pub gradient: f64,
    /// Smallest `g(A, Ā) - f(A)` over the probes.
    pub min_gap: f64,
}

/// Random block-update instance along the tube mode: `(Π, Δ, Z, Ā)`.
pub struct BlockInstance {
    pub pi: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub r_prior: DMatrix<f64>,
}

pub fn gaussian_block_instance(rng: &mut ChaCha8Rng) -> BlockInstance {
    let dims = (4, 3, 2);
    let rank = 2;
    let model = random_model(rng, dims, rank);
    let mask = random_mask(rng, dims, 0.7);
    let z = Tensor3::from_vec(dims, (0..24).map(|_| StandardNormal.sample(rng)).collect()).unwrap();
    BlockInstance {
        pi: block_khatri_rao(&model, Mode::Tube),
        delta: mask.to_tensor().unfold(Mode::Tube).matrix,
        z: z.masked(&mask).unwrap().unfold(Mode::Tube).matrix,
        a_bar: model.a,
        r_prior: random_spd(rng, dims.0),
    }
}

pub fn poisson_block_instance(rng: &mut ChaCha8Rng) -> BlockInstance {
    let dims = (4, 3, 2);
    let rank = 2;
    let model = FactorModel {
        a: positive_matrix(rng, dims.0, rank),
        b: positive_matrix(rng, dims.1, rank),
        c: positive_matrix(rng, dims.2, rank),
    };
    let mask = random_mask(rng, dims, 0.7);
    let z = Tensor3::from_vec(dims, (0..24).map(|_| rng.random_range(0..8) as f64).collect()).unwrap();
    BlockInstance {
        pi: block_khatri_rao(&model, Mode::Tube),
        delta: mask.to_tensor().unfold(Mode::Tube).matrix,
        z: z.masked(&mask).unwrap().unfold(Mode::Tube).matrix,
        a_bar: model.a,
        r_prior: random_spd(rng, dims.0),
    }
}

fn relative_gradient_gap(g: &DMatrix<f64>, f: &DMatrix<f64>) -> f64 {
    (g - f).norm() / f.norm().max(1e-300)
}

pub fn check_gaussian_majorizer(seed: u64, probes: usize) -> MajorizerCheck {
    let mut rng = rng(seed);
    let inst = gaussian_block_instance(&mut rng);
    let mu = rng.random_range(0.1..2.0);
    let prior = PreparedPrior::new(&inst.r_prior).unwrap();
    let f = |a: &DMatrix<f64>| gaussian_partial_cost(a, &prior, &inst.pi, &inst.delta, &inst.z, mu);
    let g = |a: &DMatrix<f64>, a_bar: &DMatrix<f64>| {
        majorizer_gaussian_value(a, a_bar, &prior, &inst.pi, &inst.delta, &inst.z, mu)
    };
    let f_bar = f(&inst.a_bar);
    let tightness = (g(&inst.a_bar, &inst.a_bar) - f_bar).abs() / (1.0 + f_bar.abs());
    let grad_f = fd_gradient(f, &inst.a_bar, 1e-6);
    let grad_g = fd_gradient(|a| g(a, &inst.a_bar), &inst.a_bar, 1e-6);
    let mut min_gap = f64::INFINITY;
    for _ in 0..probes {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let a = normal_matrix(&mut rng, inst.a_bar.nrows(), inst.a_bar.ncols()) * scale;
        min_gap = min_gap.min(g(&a, &inst.a_bar) - f(&a));
    }
    MajorizerCheck {
        tightness,
        gradient: relative_gradient_gap(&grad_g, &grad_f),
        min_gap,
    }
}

pub fn check_poisson_majorizer(seed: u64, probes: usize) -> MajorizerCheck {
    let mut rng = rng(seed);
    let inst = poisson_block_instance(&mut rng);
    let mu = rng.random_range(0.1..2.0);
    let prior = PreparedPrior::new(&inst.r_prior).unwrap();
    let params = poisson_majorizer_params(&inst.a_bar, &prior, &inst.pi, &inst.delta, &inst.z, mu).unwrap();
    let f = |a: &DMatrix<f64>| poisson_partial_cost(a, &prior, &inst.pi, &inst.delta, &inst.z, mu);
    let g = |a: &DMatrix<f64>| majorizer_poisson_value(a, &params);
    let f_bar = f(&inst.a_bar);
    let tightness = (g(&inst.a_bar) - f_bar).abs() / (1.0 + f_bar.abs());
    let grad_f = fd_gradient(f, &inst.a_bar, 1e-6);
    let grad_g = fd_gradient(g, &inst.a_bar, 1e-6);
    let mut min_gap = f64::INFINITY;
    for _ in 0..probes {
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let a = positive_matrix(&mut rng, inst.a_bar.nrows(), inst.a_bar.ncols()) * scale;
        min_gap = min_gap.min(g(&a) - f(&a));
    }
    MajorizerCheck {
        tightness,
        gradient: relative_gradient_gap(&grad_g, &grad_f),
        min_gap,
    }
}
