//! Compressed sparse column matrices and a sparse Cholesky factorisation.
//!
//! The storage keeps explicit zeros: a pattern built from triplets is a
//! function of the triplet positions only, never of their values. The Laplace
//! engine relies on this to reuse one symbolic analysis across every
//! hyperparameter evaluation.

mod cholesky;
mod ordering;

pub use cholesky::{CholeskyFactor, SymbolicCholesky};
pub use ordering::minimum_degree;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Triplets", try_from = "Triplets")]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-form serialisation of a sparse matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl From<CscMatrix> for Triplets {
    fn from(m: CscMatrix) -> Self {
        m.to_triplets()
    }
}

impl TryFrom<Triplets> for CscMatrix {
    type Error = Error;

    fn try_from(t: Triplets) -> Result<Self> {
        CscMatrix::from_triplet_record(&t)
    }
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    /// Builds a matrix from `(row, col, value)` entries, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in entries {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; entries.len()];
        let mut vals = vec![0.0; entries.len()];
        for &(i, j, v) in entries {
            let p = next[j];
            rows[p] = i;
            vals[p] = v;
            next[j] += 1;
        }

        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        col_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for j in 0..ncols {
            scratch.clear();
            scratch.extend((counts[j]..counts[j + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|&(i, _)| i);
            for &(i, v) in &scratch {
                if row_idx.len() > col_ptr[j] && *row_idx.last().unwrap() == i {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &entries)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row indices and values of column `j`.
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.col(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// Position of entry `(i, j)` in the value array, if it is structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.col_ptr[j];
        self.row_idx[start..self.col_ptr[j + 1]]
            .binary_search(&i)
            .ok()
            .map(|p| start + p)
    }

    pub fn same_pattern(&self, other: &CscMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.col_ptr == other.col_ptr
            && self.row_idx == other.row_idx
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |p| (self.row_idx[p], j, self.values[p]))
        })
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let q = next[i];
                row_idx[q] = j;
                values[q] = self.values[p];
                next[i] += 1;
            }
        }
        CscMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr: counts,
            row_idx,
            values,
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> CscMatrix {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `a·self + b·other` over the union of both patterns.
    pub fn add_scaled(&self, a: f64, other: &CscMatrix, b: f64) -> CscMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut col_ptr = Vec::with_capacity(self.ncols + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        col_ptr.push(0);
        for j in 0..self.ncols {
            let (ra, va) = self.col(j);
            let (rb, vb) = other.col(j);
            let (mut p, mut q) = (0, 0);
            while p < ra.len() || q < rb.len() {
                if q == rb.len() || (p < ra.len() && ra[p] < rb[q]) {
                    row_idx.push(ra[p]);
                    values.push(a * va[p]);
                    p += 1;
                } else if p == ra.len() || rb[q] < ra[p] {
                    row_idx.push(rb[q]);
                    values.push(b * vb[q]);
                    q += 1;
                } else {
                    row_idx.push(ra[p]);
                    values.push(a * va[p] + b * vb[q]);
                    p += 1;
                    q += 1;
                }
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Sparse product `self · other`; structural zeros of the product are kept.
    pub fn matmul(&self, other: &CscMatrix) -> CscMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut mark = vec![usize::MAX; self.nrows];
        let mut acc = vec![0.0; self.nrows];
        let mut col_ptr = Vec::with_capacity(other.ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        let mut rows_j: Vec<usize> = Vec::new();
        for j in 0..other.ncols {
            rows_j.clear();
            let (rb, vb) = other.col(j);
            for (&k, &bkj) in rb.iter().zip(vb) {
                let (ra, va) = self.col(k);
                for (&i, &aik) in ra.iter().zip(va) {
                    if mark[i] != j {
                        mark[i] = j;
                        acc[i] = 0.0;
                        rows_j.push(i);
                    }
                    acc[i] += aik * bkj;
                }
            }
            rows_j.sort_unstable();
            for &i in &rows_j {
                row_idx.push(i);
                values.push(acc[i]);
            }
            col_ptr.push(row_idx.len());
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &CscMatrix) -> CscMatrix {
        let nrows = self.nrows * other.nrows;
        let ncols = self.ncols * other.ncols;
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() * other.nnz());
        let mut values = Vec::with_capacity(self.nnz() * other.nnz());
        col_ptr.push(0);
        for ja in 0..self.ncols {
            let (ra, va) = self.col(ja);
            for jb in 0..other.ncols {
                let (rb, vb) = other.col(jb);
                for (&ia, &a) in ra.iter().zip(va) {
                    for (&ib, &b) in rb.iter().zip(vb) {
                        row_idx.push(ia * other.nrows + ib);
                        values.push(a * b);
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        CscMatrix {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn hstack(blocks: &[&CscMatrix]) -> Result<CscMatrix> {
        let nrows = blocks.first().map_or(0, |b| b.nrows);
        if blocks.iter().any(|b| b.nrows != nrows) {
            return Err(Error::Dimension("hstack blocks have different row counts".into()));
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for b in blocks {
            for j in 0..b.ncols {
                let (r, v) = b.col(j);
                row_idx.extend_from_slice(r);
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
        }
        Ok(CscMatrix {
            nrows,
            ncols: col_ptr.len() - 1,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn block_diag(blocks: &[&CscMatrix]) -> CscMatrix {
        let nrows: usize = blocks.iter().map(|b| b.nrows).sum();
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut row_off = 0;
        for b in blocks {
            for j in 0..b.ncols {
                let (r, v) = b.col(j);
                row_idx.extend(r.iter().map(|&i| i + row_off));
                values.extend_from_slice(v);
                col_ptr.push(row_idx.len());
            }
            row_off += b.nrows;
        }
        CscMatrix {
            nrows,
            ncols: col_ptr.len() - 1,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// `y = self · x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_acc(x, &mut y);
        y
    }

    /// `y += self · x`
    pub fn mul_vec_acc(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * xj;
            }
        }
    }

    /// `selfᵀ · x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.nrows);
        (0..self.ncols)
            .map(|j| {
                (self.col_ptr[j]..self.col_ptr[j + 1])
                    .map(|p| self.values[p] * x[self.row_idx[p]])
                    .sum()
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.nrows];
        for (i, _, v) in self.iter() {
            s[i] += v;
        }
        s
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let diff = self.add_scaled(1.0, &t, -1.0);
        diff.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.iter() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn to_triplets(&self) -> Triplets {
        let mut t = Triplets {
            nrows: self.nrows,
            ncols: self.ncols,
            rows: Vec::with_capacity(self.nnz()),
            cols: Vec::with_capacity(self.nnz()),
            values: Vec::with_capacity(self.nnz()),
        };
        for (i, j, v) in self.iter() {
            t.rows.push(i);
            t.cols.push(j);
            t.values.push(v);
        }
        t
    }

    pub fn from_triplet_record(t: &Triplets) -> Result<CscMatrix> {
        if t.rows.len() != t.cols.len() || t.rows.len() != t.values.len() {
            return Err(Error::invalid("triplet arrays have different lengths"));
        }
        if t.rows.iter().any(|&i| i >= t.nrows) || t.cols.iter().any(|&j| j >= t.ncols) {
            return Err(Error::invalid("triplet index out of bounds"));
        }
        let entries: Vec<_> = t
            .rows
            .iter()
            .zip(&t.cols)
            .zip(&t.values)
            .map(|((&i, &j), &v)| (i, j, v))
            .collect();
        Ok(CscMatrix::from_triplets(t.nrows, t.ncols, &entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CscMatrix {
        CscMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (2, 0, 2.0), (1, 1, 3.0), (2, 1, 4.0), (2, 1, 1.0)])
    }

    #[test]
    fn triplets_sum_duplicates_and_keep_zeros() {
        let m = small();
        assert_eq!(m.get(2, 1), 5.0);
        assert_eq!(m.nnz(), 4);
        let z = CscMatrix::from_triplets(2, 2, &[(0, 1, 0.0)]);
        assert_eq!(z.nnz(), 1);
    }

    #[test]
    fn products_match_dense() {
        let a = small();
        let b = CscMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (1, 2, -2.0), (0, 1, 0.5)]);
        let sparse = a.matmul(&b).to_dense();
        let dense = a.to_dense() * b.to_dense();
        assert!((sparse - dense).abs().max() < 1e-14);

        let k = a.kron(&b).to_dense();
        assert_eq!(k.shape(), (6, 6));
        assert_eq!(k[(2 * 2, 1 * 3 + 2)], a.get(2, 1) * b.get(0, 2));
        assert_eq!(k[(2 * 2 + 1, 1 * 3 + 2)], a.get(2, 1) * b.get(1, 2));
    }

    #[test]
    fn transpose_and_matvec() {
        let a = small();
        let x = [1.0, -1.0];
        let y = a.mul_vec(&x);
        assert_eq!(y, vec![1.0, -3.0, -3.0]);
        assert_eq!(a.transpose().mul_vec(&y), a.tr_mul_vec(&y));
    }

    #[test]
    fn stacking() {
        let a = small();
        let h = CscMatrix::hstack(&[&a, &a]).unwrap();
        assert_eq!(h.ncols(), 4);
        assert_eq!(h.get(2, 3), 5.0);
        let d = CscMatrix::block_diag(&[&a, &CscMatrix::identity(2)]);
        assert_eq!((d.nrows(), d.ncols()), (5, 4));
        assert_eq!(d.get(4, 3), 1.0);
    }
}
