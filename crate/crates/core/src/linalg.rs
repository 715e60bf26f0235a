//! Dense symmetric positive-definite matrix kernel.
//!
//! Everything the learners need: Cholesky solves, rank-one inverse updates,
//! log-determinants and traces over row-major `d x d` storage. Matrices here
//! are small (d up to a few hundred) so nothing is blocked or sparse.

use crate::error::{Error, Result};

/// Inner product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `sign` with the convention `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Symmetric matrix in dense row-major storage.
///
/// The type does not prove positive definiteness; operations that need it
/// factor the matrix and fail with [`Error::NumericDegeneracy`] otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SpdMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = scale;
        }
        Self { dim, data }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::scaled_identity(diag.len(), 0.0);
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds a matrix from rows, symmetrizing the input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Schema(format!(
                "matrix rows must all have length {dim}"
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        (0..self.dim).map(|i| dot(self.row(i), v)).collect()
    }

    /// `vᵀ M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += v;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `M += scale · x xᵀ`, followed by symmetrization.
    pub fn add_outer(&mut self, x: &[f64], scale: f64) {
        assert_eq!(x.len(), self.dim, "dimension mismatch");
        let d = self.dim;
        for i in 0..d {
            let si = scale * x[i];
            let row = &mut self.data[i * d..(i + 1) * d];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += si * xj;
            }
        }
        self.symmetrize();
    }

    /// `M ← (M + Mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg;
            }
        }
    }

    /// Largest absolute asymmetry `max |Mᵢⱼ − Mⱼᵢ|`.
    pub fn asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::factor(self)
    }

    /// Inverse via Cholesky; the result is symmetrized.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        Ok(self.cholesky()?.inverse())
    }
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(m: &SpdMatrix) -> Result<Self> {
        let d = m.dim;
        let mut l = vec![0.0; d * d];
        for j in 0..d {
            let mut diag = m.get(j, j);
            for k in 0..j {
                diag -= l[j * d + k] * l[j * d + k];
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NumericDegeneracy(format!(
                    "matrix is not positive definite (pivot {j} = {diag:e})"
                )));
            }
            let ljj = diag.sqrt();
            l[j * d + j] = ljj;
            for i in (j + 1)..d {
                let mut s = m.get(i, j);
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / ljj;
            }
        }
        Ok(Self { dim: d, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `M w = v`.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "dimension mismatch");
        let d = self.dim;
        let l = &self.lower;
        let mut w = v.to_vec();
        for i in 0..d {
            let mut s = w[i];
            for k in 0..i {
                s -= l[i * d + k] * w[k];
            }
            w[i] = s / l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = w[i];
            for k in (i + 1)..d {
                s -= l[k * d + i] * w[k];
            }
            w[i] = s / l[i * d + i];
        }
        w
    }

    /// `ln |M| = 2 Σ ln Lᵢᵢ`.
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
            * 2.0
    }

    pub fn inverse(&self) -> SpdMatrix {
        let d = self.dim;
        let mut inv = SpdMatrix::scaled_identity(d, 0.0);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv.symmetrize();
        inv
    }
}

/// Solves `M w = v` for positive-definite `M`.
pub fn solve_spd(m: &SpdMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if m.dim() != v.len() {
        return Err(Error::Schema(format!(
            "matrix dimension {} does not match vector length {}",
            m.dim(),
            v.len()
        )));
    }
    Ok(m.cholesky()?.solve(v))
}

/// Given `M⁻¹`, returns `(M + x xᵀ)⁻¹`.
pub fn sherman_morrison_inverse(inv: &SpdMatrix, x: &[f64]) -> SpdMatrix {
    let mut out = inv.clone();
    sherman_morrison_in_place(&mut out, x);
    out
}

/// In-place form of [`sherman_morrison_inverse`]. Returns `xᵀ M⁻¹ x` as
/// evaluated before the update.
pub fn sherman_morrison_in_place(inv: &mut SpdMatrix, x: &[f64]) -> f64 {
    let z = inv.mul_vec(x);
    let q = dot(x, &z);
    inv.add_outer(&z, -1.0 / (1.0 + q));
    q
}

pub fn log_det(m: &SpdMatrix) -> Result<f64> {
    Ok(m.cholesky()?.log_det())
}
