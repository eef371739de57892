//! Dense square matrices and an upper-triangular Cholesky factor that can be
//! scaled and rank-1 updated in place.
//!
//! Everything is row-major `f64`. The factor is stored as `U` with
//! `A = Uᵀ U`, so that the hot loops (rank-1 updates, forward substitution)
//! walk contiguous rows.

use crate::error::{Error, Result};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(dim: usize) -> Self {
        SquareMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from row-major data. Fails unless `data.len() == dim²`.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::invalid(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(SquareMatrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::invalid(
                    "matrix rows must all have length equal to the row count",
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { dim, data })
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

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Replaces the matrix with `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    /// `A += weight · v vᵀ`
    pub fn add_outer(&mut self, weight: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim);
        for (i, row) in self.data.chunks_exact_mut(self.dim).enumerate() {
            let wi = weight * v[i];
            if wi == 0.0 {
                continue;
            }
            for (a, &vj) in row.iter_mut().zip(v) {
                *a += wi * vj;
            }
        }
    }

    pub fn add_diagonal(&mut self, value: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += value;
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|row| dot(row, v))
            .collect()
    }

    pub fn frobenius_distance(&self, other: &SquareMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Upper-triangular Cholesky factor `U` of a symmetric positive definite
/// matrix `A = Uᵀ U`. Entries below the diagonal are kept at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    upper: SquareMatrix,
}

impl CholeskyFactor {
    /// Factorizes `a`, reading only its upper triangle.
    pub fn factorize(a: &SquareMatrix) -> Result<Self> {
        let n = a.dim();
        let mut u = SquareMatrix::zeros(n);
        // Row-oriented right-looking elimination on the upper triangle.
        for i in 0..n {
            u.data[i * n + i..(i + 1) * n].copy_from_slice(&a.data[i * n + i..(i + 1) * n]);
        }
        for k in 0..n {
            let pivot = u.data[k * n + k];
            if pivot.is_nan() || pivot <= 0.0 || pivot.is_infinite() {
                return Err(Error::NumericalBreakdown(format!(
                    "non-positive pivot {pivot:e} at index {k} while factorizing a {n}x{n} matrix"
                )));
            }
            let diag = pivot.sqrt();
            let inv = 1.0 / diag;
            u.data[k * n + k] = diag;
            for v in &mut u.data[k * n + k + 1..(k + 1) * n] {
                *v *= inv;
            }
            let (head, tail) = u.data.split_at_mut((k + 1) * n);
            let row_k = &head[k * n..];
            for (off, row) in tail.chunks_exact_mut(n).enumerate() {
                let i = k + 1 + off;
                let uki = row_k[i];
                if uki == 0.0 {
                    continue;
                }
                for (dst, &ukj) in row[i..].iter_mut().zip(&row_k[i..]) {
                    *dst -= uki * ukj;
                }
            }
        }
        Ok(CholeskyFactor { upper: u })
    }

    pub fn identity(dim: usize) -> Self {
        CholeskyFactor {
            upper: SquareMatrix::identity(dim),
        }
    }

    pub(crate) fn from_upper(upper: SquareMatrix) -> Self {
        CholeskyFactor { upper }
    }

    pub fn dim(&self) -> usize {
        self.upper.dim()
    }

    pub fn upper(&self) -> &SquareMatrix {
        &self.upper
    }

    /// Factor of `c · A` for `c > 0`.
    pub fn scale(&mut self, c: f64) {
        debug_assert!(c > 0.0);
        let root = c.sqrt();
        let n = self.dim();
        for (i, row) in self.upper.data.chunks_exact_mut(n).enumerate() {
            row[i..].iter_mut().for_each(|v| *v *= root);
        }
    }

    /// Turns the factor of `A` into the factor of `A + x xᵀ`. `x` is consumed
    /// as scratch space.
    pub fn rank_one_update(&mut self, x: &mut [f64]) {
        let n = self.dim();
        debug_assert_eq!(x.len(), n);
        let u = &mut self.upper.data;
        for k in 0..n {
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            let ukk = u[k * n + k];
            let r = ukk.hypot(xk);
            let c = r / ukk;
            let s = xk / ukk;
            u[k * n + k] = r;
            let inv_c = 1.0 / c;
            let row = &mut u[k * n + k + 1..(k + 1) * n];
            for (ukj, xj) in row.iter_mut().zip(&mut x[k + 1..]) {
                let updated = (*ukj + s * *xj) * inv_c;
                *xj = c * *xj - s * updated;
                *ukj = updated;
            }
        }
    }

    /// Solves `Uᵀ z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        let u = &self.upper.data;
        for j in 0..n {
            let zj = b[j] / u[j * n + j];
            b[j] = zj;
            if zj == 0.0 {
                continue;
            }
            for (bi, &uji) in b[j + 1..].iter_mut().zip(&u[j * n + j + 1..(j + 1) * n]) {
                *bi -= uji * zj;
            }
        }
    }

    /// Solves `U x = z` in place.
    pub fn solve_upper_in_place(&self, z: &mut [f64]) {
        let n = self.dim();
        let u = &self.upper.data;
        for i in (0..n).rev() {
            let tail = dot(&u[i * n + i + 1..(i + 1) * n], &z[i + 1..]);
            z[i] = (z[i] - tail) / u[i * n + i];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_lower_in_place(&mut x);
        self.solve_upper_in_place(&mut x);
        x
    }

    /// `vᵀ A⁻¹ v`, via one triangular solve.
    pub fn inverse_quadratic_form(&self, v: &[f64]) -> f64 {
        let mut z = v.to_vec();
        self.solve_lower_in_place(&mut z);
        dot(&z, &z)
    }

    /// `log det A`.
    pub fn log_determinant(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.upper.get(i, i).ln())
            .sum::<f64>()
    }

    /// Reconstructs `A = Uᵀ U`.
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.dim();
        let mut a = SquareMatrix::zeros(n);
        for k in 0..n {
            let row = self.upper.row(k);
            for i in k..n {
                let uki = row[i];
                if uki == 0.0 {
                    continue;
                }
                for (dst, &ukj) in a.data[i * n + k..(i + 1) * n].iter_mut().zip(&row[k..]) {
                    *dst += uki * ukj;
                }
            }
        }
        a
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm. Returns `None` for zero or non-finite
/// vectors.
pub fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    if n > 0.0 && n.is_finite() {
        Some(v.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> SquareMatrix {
        // B Bᵀ + n I with a tiny LCG; keeps this module free of rand.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let b: Vec<f64> = (0..n * n).map(|_| next()).collect();
        let mut a = SquareMatrix::identity(n);
        a.scale(n as f64 * 0.1);
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                a.data[i * n + j] += v;
            }
        }
        a
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let a = spd(7, 3);
        let f = CholeskyFactor::factorize(&a).unwrap();
        let back = f.reconstruct();
        assert!(a.frobenius_distance(&back) < 1e-12 * a.max_abs() * 7.0);
    }

    #[test]
    fn solve_residual_is_small() {
        let a = spd(9, 11);
        let f = CholeskyFactor::factorize(&a).unwrap();
        let b: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let x = f.solve(&b);
        let r = a.mul_vec(&x);
        let res: f64 = r
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-12 * norm(&b));
    }

    #[test]
    fn rank_one_update_matches_refactorization() {
        let mut a = spd(6, 5);
        let mut f = CholeskyFactor::factorize(&a).unwrap();
        let v = [0.3, -1.2, 0.0, 2.0, 0.5, -0.7];
        f.scale(0.8);
        a.scale(0.8);
        let mut x = v.to_vec();
        f.rank_one_update(&mut x);
        a.add_outer(1.0, &v);
        let fresh = CholeskyFactor::factorize(&a).unwrap();
        assert!(f.upper().frobenius_distance(fresh.upper()) < 1e-12);
    }

    #[test]
    fn negative_definite_breaks_down() {
        let mut a = SquareMatrix::identity(3);
        a.scale(-1.0);
        assert!(matches!(
            CholeskyFactor::factorize(&a),
            Err(Error::NumericalBreakdown(_))
        ));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
