//! Dense three-way tensors and masks.
//!
//! Storage is slice-major: `m` varies fastest, then `n`, then `p`, so the
//! value of entry `(m, n, p)` lives at `m + M * (n + N * p)`. With this
//! layout the tube-mode unfolding `[X_1, ..., X_P]` is the raw buffer read as
//! a column-major `M x NP` matrix.
//!
//! The three unfoldings used throughout the crate are
//!
//! | mode     | shape     | column index | matches                  |
//! |----------|-----------|--------------|--------------------------|
//! | `Tube`   | `M x NP`  | `p*N + n`    | `A * khatri_rao(C, B)^T` |
//! | `Row`    | `N x MP`  | `m*P + p`    | `B * khatri_rao(A, C)^T` |
//! | `Column` | `P x NM`  | `n*M + m`    | `C * khatri_rao(B, A)^T` |

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{input_err, shape_err, ImputeError, Result};

pub type Dims = (usize, usize, usize);

/// Slicing/unfolding direction.
///
/// `Tube` slices are indexed by `p` and stack into the unfolding updated
/// alongside factor `A`; `Row` slices are indexed by `m` (factor `B`);
/// `Column` slices are indexed by `n` (factor `C`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Row,
    Column,
    Tube,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Tube, Mode::Row, Mode::Column];

    /// Number of slices along this mode.
    pub fn extent(self, (m, n, p): Dims) -> usize {
        match self {
            Mode::Row => m,
            Mode::Column => n,
            Mode::Tube => p,
        }
    }

    /// Row count of this mode's unfolding, i.e. the row count of the factor it pairs with.
    pub fn unfolding_rows(self, (m, n, p): Dims) -> usize {
        match self {
            Mode::Tube => m,
            Mode::Row => n,
            Mode::Column => p,
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "row" | "m" => Ok(Mode::Row),
            "column" | "col" | "n" => Ok(Mode::Column),
            "tube" | "p" => Ok(Mode::Tube),
            other => input_err(format!("unknown mode '{other}' (expected row, column or tube)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Row => "row",
            Mode::Column => "column",
            Mode::Tube => "tube",
        })
    }
}

#[inline]
fn offset((m_dim, n_dim, _): Dims, m: usize, n: usize, p: usize) -> usize {
    m + m_dim * (n + n_dim * p)
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return shape_err(format!("dimensions must be positive, got {dims:?}"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: Dims,
    values: Vec<f64>,
}

impl Tensor3 {
    /// Wraps a slice-major buffer. Rejects length mismatches and non-finite entries.
    pub fn from_vec(dims: Dims, values: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        if values.len() != dims.0 * dims.1 * dims.2 {
            return shape_err(format!(
                "expected {} values for dims {:?}, got {}",
                dims.0 * dims.1 * dims.2,
                dims,
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return input_err(format!("non-finite tensor entry at offset {i}"));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for p in 0..dims.2 {
            for n in 0..dims.1 {
                for m in 0..dims.0 {
                    values.push(f(m, n, p));
                }
            }
        }
        Self { dims, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, p: usize) -> f64 {
        self.values[offset(self.dims, m, n, p)]
    }

    /// Tube-mode unfolding `[X_1, ..., X_P]` as a borrowed `M x NP` view.
    pub fn tube_unfolding_view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.values, self.dims.0, self.dims.1 * self.dims.2)
    }

    pub fn slice(&self, mode: Mode, index: usize) -> Result<DMatrix<f64>> {
        let (m_dim, n_dim, p_dim) = self.dims;
        let extent = mode.extent(self.dims);
        if index >= extent {
            return Err(ImputeError::Bounds { index, extent });
        }
        Ok(match mode {
            Mode::Tube => DMatrix::from_fn(m_dim, n_dim, |m, n| self.get(m, n, index)),
            Mode::Row => DMatrix::from_fn(n_dim, p_dim, |n, p| self.get(index, n, p)),
            Mode::Column => DMatrix::from_fn(p_dim, m_dim, |p, m| self.get(m, index, p)),
        })
    }

    pub fn unfold(&self, mode: Mode) -> Unfolding {
        let (m_dim, n_dim, p_dim) = self.dims;
        let matrix = match mode {
            Mode::Tube => self.tube_unfolding_view().into_owned(),
            Mode::Row => DMatrix::from_fn(n_dim, m_dim * p_dim, |n, k| {
                self.get(k / p_dim, n, k % p_dim)
            }),
            Mode::Column => DMatrix::from_fn(p_dim, n_dim * m_dim, |p, k| {
                self.get(k % m_dim, k / m_dim, p)
            }),
        };
        Unfolding {
            matrix,
            mode,
            dims: self.dims,
        }
    }

    /// Squared Frobenius norm, optionally restricted to the cells flagged in `mask`.
    pub fn frobenius_sq(&self, mask: Option<&Mask3>) -> Result<f64> {
        match mask {
            None => Ok(self.values.iter().map(|v| v * v).sum()),
            Some(mask) => {
                if mask.dims() != self.dims {
                    return shape_err(format!(
                        "mask dims {:?} do not match tensor dims {:?}",
                        mask.dims(),
                        self.dims
                    ));
                }
                Ok(self
                    .values
                    .iter()
                    .zip(mask.flags())
                    .filter(|(_, &f)| f == 1)
                    .map(|(v, _)| v * v)
                    .sum())
            }
        }
    }

    /// Elementwise product with a mask (unobserved cells become zero).
    pub fn masked(&self, mask: &Mask3) -> Result<Tensor3> {
        if mask.dims() != self.dims {
            return shape_err("mask dims do not match tensor dims");
        }
        let values = self
            .values
            .iter()
            .zip(mask.flags())
            .map(|(&v, &f)| if f == 1 { v } else { 0.0 })
            .collect();
        Ok(Tensor3 {
            dims: self.dims,
            values,
        })
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if other.dims != self.dims {
            return shape_err("tensor dims differ");
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor3 {
            dims: self.dims,
            values,
        })
    }
}

/// Binary observation mask, stored one byte per cell in the tensor layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask3 {
    dims: Dims,
    flags: Vec<u8>,
}

impl Mask3 {
    pub fn from_vec(dims: Dims, flags: Vec<u8>) -> Result<Self> {
        check_dims(dims)?;
        if flags.len() != dims.0 * dims.1 * dims.2 {
            return shape_err(format!(
                "expected {} mask flags for dims {:?}, got {}",
                dims.0 * dims.1 * dims.2,
                dims,
                flags.len()
            ));
        }
        if let Some(i) = flags.iter().position(|&f| f > 1) {
            return input_err(format!("mask entry at offset {i} is not 0 or 1"));
        }
        Ok(Self { dims, flags })
    }

    pub fn full(dims: Dims) -> Self {
        Self {
            dims,
            flags: vec![1; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn empty(dims: Dims) -> Self {
        Self {
            dims,
            flags: vec![0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut flags = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for p in 0..dims.2 {
            for n in 0..dims.1 {
                for m in 0..dims.0 {
                    flags.push(f(m, n, p) as u8);
                }
            }
        }
        Self { dims, flags }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, m: usize, n: usize, p: usize) -> bool {
        self.flags[offset(self.dims, m, n, p)] == 1
    }

    pub fn set(&mut self, m: usize, n: usize, p: usize, observed: bool) {
        let i = offset(self.dims, m, n, p);
        self.flags[i] = observed as u8;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f == 1).count()
    }

    pub fn complement(&self) -> Mask3 {
        Mask3 {
            dims: self.dims,
            flags: self.flags.iter().map(|&f| 1 - f).collect(),
        }
    }

    /// Mask as a 0/1 tensor, used to unfold it alongside the data.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            values: self.flags.iter().map(|&f| f as f64).collect(),
        }
    }

    /// True when no cell of the given slice is observed.
    pub fn slice_unobserved(&self, mode: Mode, index: usize) -> Result<bool> {
        let extent = mode.extent(self.dims);
        if index >= extent {
            return Err(ImputeError::Bounds { index, extent });
        }
        let (m_dim, n_dim, p_dim) = self.dims;
        let any = match mode {
            Mode::Tube => (0..n_dim).any(|n| (0..m_dim).any(|m| self.get(m, n, index))),
            Mode::Row => (0..p_dim).any(|p| (0..n_dim).any(|n| self.get(index, n, p))),
            Mode::Column => (0..p_dim).any(|p| (0..m_dim).any(|m| self.get(m, index, p))),
        };
        Ok(!any)
    }
}

/// Matricized tensor together with the mode it was unfolded along.
#[derive(Clone, Debug, PartialEq)]
pub struct Unfolding {
    pub matrix: DMatrix<f64>,
    pub mode: Mode,
    dims: Dims,
}

impl Unfolding {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn refold(&self) -> Tensor3 {
        let (m_dim, _, p_dim) = self.dims;
        let x = &self.matrix;
        match self.mode {
            Mode::Tube => Tensor3 {
                dims: self.dims,
                values: x.as_slice().to_vec(),
            },
            Mode::Row => Tensor3::from_fn(self.dims, |m, n, p| x[(n, m * p_dim + p)]),
            Mode::Column => Tensor3::from_fn(self.dims, |m, n, p| x[(p, n * m_dim + m)]),
        }
    }
}

/// Column-wise Kronecker product: column `r` of the result is `left_r ⊗ right_r`,
/// so row `i * right.nrows() + j` holds `left[(i, r)] * right[(j, r)]`.
pub fn khatri_rao(left: &DMatrix<f64>, right: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if left.ncols() != right.ncols() {
        return shape_err(format!(
            "khatri-rao column mismatch: {} vs {}",
            left.ncols(),
            right.ncols()
        ));
    }
    let rows = right.nrows();
    Ok(DMatrix::from_fn(left.nrows() * rows, left.ncols(), |k, r| {
        left[(k / rows, r)] * right[(k % rows, r)]
    }))
}

/// Builds `X(m,n,p) = sum_r A(m,r) B(n,r) C(p,r)`.
pub fn parafac_reconstruct(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<Tensor3> {
    if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
        return shape_err(format!(
            "factor column counts differ: {}, {}, {}",
            a.ncols(),
            b.ncols(),
            c.ncols()
        ));
    }
    let dims = (a.nrows(), b.nrows(), c.nrows());
    check_dims(dims)?;
    let pi = khatri_rao(c, b)?;
    let x = a * pi.transpose();
    Ok(Tensor3 {
        dims,
        values: x.as_slice().to_vec(),
    })
}
