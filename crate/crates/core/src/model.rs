//! PARAFAC factor model and rank diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Result};
use crate::tensor::{parafac_reconstruct, Mode, Tensor3};

/// Default relative threshold on `gamma_r / max gamma` for counting a component.
pub const DEFAULT_RANK_TOL: f64 = 1e-2;
/// Components smaller than this fraction of the data norm count as zero.
pub const NULL_COMPONENT_TOL: f64 = 1e-10;

/// Factor matrices `A` (M x R), `B` (N x R) and `C` (P x R).
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl FactorModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
            return shape_err(format!(
                "factor column counts differ: {}, {}, {}",
                a.ncols(),
                b.ncols(),
                c.ncols()
            ));
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(crate::ImputeError::Input("non-finite factor entry".into()));
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    pub fn reconstruct(&self) -> Tensor3 {
        parafac_reconstruct(&self.a, &self.b, &self.c).expect("factor shapes validated at construction")
    }

    /// Factor paired with a given unfolding mode.
    pub fn factor(&self, mode: Mode) -> &DMatrix<f64> {
        match mode {
            Mode::Tube => &self.a,
            Mode::Row => &self.b,
            Mode::Column => &self.c,
        }
    }

    /// `gamma_r = |a_r| |b_r| |c_r|` for each component.
    pub fn gammas(&self) -> DVector<f64> {
        DVector::from_fn(self.rank(), |r, _| {
            self.a.column(r).norm() * self.b.column(r).norm() * self.c.column(r).norm()
        })
    }

    pub fn normalize(&self) -> NormalizedModel {
        let r = self.rank();
        let mut gamma = DVector::zeros(r);
        let mut u = DMatrix::zeros(self.a.nrows(), r);
        let mut v = DMatrix::zeros(self.b.nrows(), r);
        let mut w = DMatrix::zeros(self.c.nrows(), r);
        for k in 0..r {
            let (na, nb, nc) = (
                self.a.column(k).norm(),
                self.b.column(k).norm(),
                self.c.column(k).norm(),
            );
            let g = na * nb * nc;
            if g == 0.0 {
                continue;
            }
            gamma[k] = g;
            u.set_column(k, &(self.a.column(k) / na));
            v.set_column(k, &(self.b.column(k) / nb));
            w.set_column(k, &(self.c.column(k) / nc));
        }
        NormalizedModel { gamma, u, v, w }
    }

    /// Number of components with `gamma_r > rel_tol * max gamma`; 0 for an all-zero model.
    pub fn effective_rank(&self, rel_tol: f64) -> usize {
        let gamma = self.gammas();
        let max = gamma.max();
        if max <= 0.0 {
            return 0;
        }
        gamma.iter().filter(|&&g| g > rel_tol * max).count()
    }

    /// Like [`Self::effective_rank`], but components with `gamma_r <= abs_floor`
    /// never count, so a numerically vanished model has rank 0.
    pub fn effective_rank_above(&self, rel_tol: f64, abs_floor: f64) -> usize {
        let gamma = self.gammas();
        let threshold = (rel_tol * gamma.max()).max(abs_floor);
        gamma.iter().filter(|&&g| g > threshold).count()
    }

    /// `(sum_r gamma_r^q)^(1/q)`; with `q = 2/3` this is the rank-inducing penalty.
    pub fn gamma_pseudonorm(&self, q: f64) -> f64 {
        self.gammas().iter().map(|g| g.powf(q)).sum::<f64>().powf(1.0 / q)
    }

    /// Largest pairwise relative gap among `|A|_F`, `|B|_F`, `|C|_F`, measured
    /// against the smaller of each pair. Zero for the all-zero model.
    pub fn equal_norm_residual(&self) -> f64 {
        let norms = [self.a.norm(), self.b.norm(), self.c.norm()];
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in (i + 1)..3 {
                let (lo, hi) = (norms[i].min(norms[j]), norms[i].max(norms[j]));
                if hi == 0.0 {
                    continue;
                }
                if lo == 0.0 {
                    return f64::INFINITY;
                }
                worst = worst.max((hi - lo) / lo);
            }
        }
        worst
    }

    /// Applies the same column permutation to all three factors.
    pub fn permute_columns(&self, order: &[usize]) -> FactorModel {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), order.len(), |i, k| m[(i, order[k])]);
        FactorModel {
            a: pick(&self.a),
            b: pick(&self.b),
            c: pick(&self.c),
        }
    }
}

/// `X = sum_r gamma_r u_r ∘ v_r ∘ w_r` with unit-norm (or zero) columns.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedModel {
    pub gamma: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl NormalizedModel {
    /// Back to factors, spreading each weight evenly as `gamma_r^(1/3)`.
    pub fn to_factors(&self) -> FactorModel {
        let scale = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            for (k, mut col) in out.column_iter_mut().enumerate() {
                col *= self.gamma[k].cbrt();
            }
            out
        };
        FactorModel {
            a: scale(&self.u),
            b: scale(&self.v),
            c: scale(&self.w),
        }
    }
}
