//! Dense complex linear algebra primitives.
//!
//! Everything in the crate is desk-scale (dimensions ≤ 64), so a single dense
//! row-major complex matrix type is the universal carrier for states, POVM
//! elements, and Choi matrices. Eigendecompositions go through nalgebra's
//! symmetric (Hermitian) eigensolver after explicit symmetrization.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{QirtError, Result};

/// Tolerance below which a matrix is accepted as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;

pub type C64 = Complex64;

/// Shorthand for a real complex scalar.
#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = re(1.0);
        }
        m
    }

    /// Build from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(QirtError::DimensionMismatch("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    /// Build from a flat row-major slice of real values.
    pub fn from_real(rows: usize, cols: usize, vals: &[f64]) -> Self {
        assert_eq!(vals.len(), rows * cols);
        Self { rows, cols, data: vals.iter().map(|&v| re(v)).collect() }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Column vector |i⟩ in dimension d, as a d×1 matrix.
    pub fn ket(d: usize, i: usize) -> Self {
        let mut m = Self::zeros(d, 1);
        m[(i, 0)] = re(1.0);
        m
    }

    /// Projector |v⟩⟨v| from a column vector (not necessarily normalized).
    pub fn outer(v: &ComplexMatrix, w: &ComplexMatrix) -> Self {
        assert_eq!(v.cols, 1);
        assert_eq!(w.cols, 1);
        let mut m = Self::zeros(v.rows, w.rows);
        for i in 0..v.rows {
            for j in 0..w.rows {
                m[(i, j)] = v[(i, 0)] * w[(j, 0)].conj();
            }
        }
        m
    }

    pub fn proj(v: &ComplexMatrix) -> Self {
        Self::outer(v, v)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(re(s))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dims");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a.conj()).collect(),
        }
    }

    pub fn adjoint(&self) -> Self {
        self.transpose().conj()
    }

    pub fn trace(&self) -> C64 {
        assert!(self.is_square(), "trace of non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn fro_norm(&self) -> f64 {
        self.data.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise modulus of the difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.sub(other).max_abs()
    }

    /// ⟨A,B⟩ = Tr[A†B].
    pub fn hs_inner(&self, other: &Self) -> C64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Asymmetry ‖M − M†‖_max.
    pub fn herm_defect(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.herm_defect() <= tol
    }

    /// (M + M†)/2.
    pub fn herm_part(&self) -> Self {
        self.add(&self.adjoint()).scale_re(0.5)
    }

    /// Kronecker product, `self ⊗ other`.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    fn check_dims(&self, dims: &[usize]) -> Result<()> {
        let prod: usize = dims.iter().product();
        if !self.is_square() || prod != self.rows {
            return Err(QirtError::DimensionMismatch(format!(
                "subsystem dims {:?} do not factor a {}×{} matrix",
                dims, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Trace over every subsystem NOT listed in `keep` (indices into `dims`).
    pub fn partial_trace(&self, dims: &[usize], keep: &[usize]) -> Result<Self> {
        self.check_dims(dims)?;
        let n = dims.len();
        if keep.iter().any(|&k| k >= n) {
            return Err(QirtError::InvalidArgument("keep index out of range".into()));
        }
        let kept_dim: usize = keep.iter().map(|&k| dims[k]).product();
        let mut out = Self::zeros(kept_dim, kept_dim);
        // Walk every (row, col) index pair of the big matrix; accumulate when
        // discarded subsystem indices agree.
        let strides: Vec<usize> = (0..n)
            .map(|i| dims[i + 1..].iter().product())
            .collect();
        let kept_strides: Vec<usize> = (0..keep.len())
            .map(|i| keep[i + 1..].iter().map(|&k| dims[k]).product())
            .collect();
        for row in 0..self.rows {
            let ridx: Vec<usize> = (0..n).map(|i| (row / strides[i]) % dims[i]).collect();
            for col in 0..self.cols {
                let cidx: Vec<usize> = (0..n).map(|i| (col / strides[i]) % dims[i]).collect();
                if (0..n).any(|i| !keep.contains(&i) && ridx[i] != cidx[i]) {
                    continue;
                }
                let r_out: usize = keep
                    .iter()
                    .enumerate()
                    .map(|(pos, &k)| ridx[k] * kept_strides[pos])
                    .sum();
                let c_out: usize = keep
                    .iter()
                    .enumerate()
                    .map(|(pos, &k)| cidx[k] * kept_strides[pos])
                    .sum();
                out[(r_out, c_out)] += self[(row, col)];
            }
        }
        Ok(out)
    }

    /// Transpose on one tensor factor.
    pub fn partial_transpose(&self, dims: &[usize], system: usize) -> Result<Self> {
        self.check_dims(dims)?;
        let n = dims.len();
        if system >= n {
            return Err(QirtError::InvalidArgument("system index out of range".into()));
        }
        let strides: Vec<usize> = (0..n)
            .map(|i| dims[i + 1..].iter().product())
            .collect();
        let mut out = Self::zeros(self.rows, self.cols);
        for row in 0..self.rows {
            for col in 0..self.cols {
                let ri = (row / strides[system]) % dims[system];
                let ci = (col / strides[system]) % dims[system];
                let row_sw = (row as i64 + (ci as i64 - ri as i64) * strides[system] as i64) as usize;
                let col_sw = (col as i64 + (ri as i64 - ci as i64) * strides[system] as i64) as usize;
                out[(row_sw, col_sw)] = self[(row, col)];
            }
        }
        Ok(out)
    }

    /// Permute tensor factors: output factor `i` is input factor `perm[i]`.
    pub fn permute_subsystems(&self, dims: &[usize], perm: &[usize]) -> Result<Self> {
        self.check_dims(dims)?;
        let n = dims.len();
        if perm.len() != n || {
            let mut seen = vec![false; n];
            perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        } {
            return Err(QirtError::InvalidArgument("not a permutation".into()));
        }
        let in_strides: Vec<usize> = (0..n)
            .map(|i| dims[i + 1..].iter().product())
            .collect();
        let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
        let out_strides: Vec<usize> = (0..n)
            .map(|i| out_dims[i + 1..].iter().product())
            .collect();
        let map_index = |idx: usize| -> usize {
            (0..n)
                .map(|i| ((idx / in_strides[perm[i]]) % dims[perm[i]]) * out_strides[i])
                .sum()
        };
        let mut out = Self::zeros(self.rows, self.cols);
        for row in 0..self.rows {
            let r = map_index(row);
            for col in 0..self.cols {
                out[(r, map_index(col))] = self[(row, col)];
            }
        }
        Ok(out)
    }

    fn to_na(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }


    /// Eigendecomposition of a Hermitian matrix.
    ///
    /// The input is symmetrized as (M+M†)/2 before the solve; inputs whose
    /// asymmetry exceeds [`HERMITIAN_TOL`] (relative to scale) are rejected.
    /// Returns eigenvalues in descending order with matching eigenvector
    /// columns; reconstruction ‖M − VΛV†‖_F ≤ 1e-9‖M‖_F.
    pub fn hermitian_eigs(&self) -> Result<(Vec<f64>, ComplexMatrix)> {
        if !self.is_square() {
            return Err(QirtError::DimensionMismatch("eigs of non-square matrix".into()));
        }
        let scale = self.max_abs().max(1.0);
        let defect = self.herm_defect();
        if defect > HERMITIAN_TOL * scale.max(1.0) * 10.0 && defect > 1e-8 {
            return Err(QirtError::NotHermitian(defect));
        }
        let h = self.herm_part().to_na();
        let mut eig = h.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            // nalgebra's tridiagonalization can emit NaNs on highly structured
            // degenerate matrices (e.g. large maximally-entangled projectors).
            // A deterministic diagonal dither of at most 1e-13·scale breaks
            // the pattern while perturbing the spectrum far below our
            // reconstruction tolerance.
            let n = self.rows;
            let mut dithered = h;
            for i in 0..n {
                let shift = 1e-13 * scale * (i + 1) as f64 / n as f64;
                dithered[(i, i)] += C64::new(shift, 0.0);
            }
            eig = dithered.symmetric_eigen();
            if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
                return Err(QirtError::Solver("eigendecomposition produced NaN".into()));
            }
        }
        let n = self.rows;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = ComplexMatrix::zeros(n, n);
        for (jout, &jin) in order.iter().enumerate() {
            for i in 0..n {
                vecs[(i, jout)] = eig.eigenvectors[(i, jin)];
            }
        }
        Ok((vals, vecs))
    }

    /// Smallest eigenvalue of a Hermitian matrix.
    pub fn min_eig(&self) -> Result<f64> {
        let (vals, _) = self.hermitian_eigs()?;
        Ok(*vals.last().expect("nonempty spectrum"))
    }

    /// Trace norm (sum of singular values). For Hermitian input this is the
    /// sum of absolute eigenvalues; general input goes through an SVD.
    pub fn trace_norm(&self) -> f64 {
        assert!(self.is_square(), "trace norm of non-square matrix");
        if self.is_hermitian(1e-9 * self.max_abs().max(1.0)) {
            let (vals, _) = self.herm_part().hermitian_eigs().expect("hermitian");
            vals.iter().map(|v| v.abs()).sum()
        } else {
            self.to_na().svd(false, false).singular_values.iter().sum()
        }
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        match self.min_eig() {
            Ok(min) => min >= -tol,
            Err(_) => false,
        }
    }

    /// Hermitian square root of a PSD matrix (negative eigenvalues clipped).
    pub fn psd_sqrt(&self) -> Result<Self> {
        let (vals, vecs) = self.hermitian_eigs()?;
        Ok(rebuild_from_eigs(&vals.iter().map(|v| v.max(0.0).sqrt()).collect::<Vec<_>>(), &vecs))
    }

    /// Inverse Hermitian square root of a positive definite matrix.
    pub fn psd_inv_sqrt(&self) -> Result<Self> {
        let (vals, vecs) = self.hermitian_eigs()?;
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(QirtError::InvalidArgument("matrix not positive definite".into()));
        }
        Ok(rebuild_from_eigs(&vals.iter().map(|v| 1.0 / v.sqrt()).collect::<Vec<_>>(), &vecs))
    }
}

fn rebuild_from_eigs(vals: &[f64], vecs: &ComplexMatrix) -> ComplexMatrix {
    let n = vecs.rows;
    let mut scaled = vecs.clone();
    for j in 0..n {
        for i in 0..n {
            scaled[(i, j)] = scaled[(i, j)] * re(vals[j]);
        }
    }
    scaled.matmul(&vecs.adjoint())
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Pauli matrices and friends.
pub mod ops {
    use super::{re, ComplexMatrix, C64};

    pub fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    pub fn sigma_y() -> ComplexMatrix {
        ComplexMatrix::from_vec(
            2,
            2,
            vec![
                C64::new(0.0, 0.0),
                C64::new(0.0, -1.0),
                C64::new(0.0, 1.0),
                C64::new(0.0, 0.0),
            ],
        )
    }

    pub fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0])
    }

    /// |+⟩ / |−⟩ as kets.
    pub fn plus_ket() -> ComplexMatrix {
        let s = 1.0 / 2.0_f64.sqrt();
        ComplexMatrix::from_real(2, 1, &[s, s])
    }

    pub fn minus_ket() -> ComplexMatrix {
        let s = 1.0 / 2.0_f64.sqrt();
        ComplexMatrix::from_real(2, 1, &[s, -s])
    }

    /// Unnormalized maximally entangled operator |Ω⟩⟨Ω| with |Ω⟩ = Σ_i |ii⟩.
    pub fn omega(d: usize) -> ComplexMatrix {
        let mut v = ComplexMatrix::zeros(d * d, 1);
        for i in 0..d {
            v[(i * d + i, 0)] = re(1.0);
        }
        ComplexMatrix::proj(&v)
    }
}
