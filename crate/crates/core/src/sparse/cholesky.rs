use std::sync::Arc;

use super::{minimum_degree, CscMatrix};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Ordering, elimination tree and factor pattern of a symmetric matrix.
///
/// Built once per sparsity pattern and shared (via `Arc`) by every numeric
/// factorisation of a matrix with that pattern.
#[derive(Debug, Clone)]
pub struct SymbolicCholesky {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    a_col_ptr: Vec<usize>,
    a_row_idx: Vec<usize>,
    // upper triangle of P A Pᵀ
    c_col_ptr: Vec<usize>,
    c_row_idx: Vec<usize>,
    a_to_c: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    // row k of L: columns j < k and the position of L(k, j) in the value array
    row_ptr: Vec<usize>,
    row_col: Vec<usize>,
    row_pos: Vec<usize>,
}

impl SymbolicCholesky {
    /// Analyses a structurally symmetric matrix stored with both triangles.
    pub fn analyze(a: &CscMatrix) -> Result<Arc<Self>> {
        let perm = minimum_degree(a);
        Self::analyze_with_ordering(a, perm)
    }

    pub fn analyze_with_ordering(a: &CscMatrix, perm: Vec<usize>) -> Result<Arc<Self>> {
        let n = a.ncols();
        if a.nrows() != n || perm.len() != n {
            return Err(Error::Dimension(format!(
                "cholesky needs a square matrix and full ordering, got {}x{} with {} ordering entries",
                a.nrows(),
                n,
                perm.len()
            )));
        }
        let mut iperm = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || iperm[old] != NONE {
                return Err(Error::invalid("ordering is not a permutation"));
            }
            iperm[old] = new;
        }

        // Upper triangle of C = P A Pᵀ and the scatter map from A's values.
        let mut upper: Vec<(usize, usize, usize)> = Vec::with_capacity(a.nnz() / 2 + n);
        for j in 0..n {
            let nj = iperm[j];
            for p in a.col_ptr()[j]..a.col_ptr()[j + 1] {
                let ni = iperm[a.row_idx()[p]];
                if ni <= nj {
                    upper.push((nj, ni, p));
                }
            }
        }
        upper.sort_unstable();
        let mut c_col_ptr = vec![0usize; n + 1];
        let mut c_row_idx = Vec::with_capacity(upper.len());
        let mut a_to_c = vec![NONE; a.nnz()];
        for (q, &(col, row, p)) in upper.iter().enumerate() {
            c_col_ptr[col + 1] += 1;
            c_row_idx.push(row);
            a_to_c[p] = q;
        }
        for j in 0..n {
            c_col_ptr[j + 1] += c_col_ptr[j];
        }
        for j in 0..n {
            let has_diag = c_row_idx[c_col_ptr[j]..c_col_ptr[j + 1]].last() == Some(&j);
            if !has_diag {
                return Err(Error::invalid(format!(
                    "pattern is missing diagonal entry {}",
                    perm[j]
                )));
            }
        }

        // Elimination tree.
        let mut parent = vec![NONE; n];
        let mut ancestor = vec![NONE; n];
        for k in 0..n {
            for &row in &c_row_idx[c_col_ptr[k]..c_col_ptr[k + 1]] {
                let mut i = row;
                while i != NONE && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == NONE {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        // Strictly-lower pattern of C by column.
        let mut lower_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for k in 0..n {
            for &i in &c_row_idx[c_col_ptr[k]..c_col_ptr[k + 1]] {
                if i < k {
                    lower_cols[i].push(k);
                }
            }
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (j, &p) in parent.iter().enumerate() {
            if p != NONE {
                children[p].push(j);
            }
        }

        // Column patterns of L: own lower entries plus children's patterns.
        let mut col_patterns: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut mark = vec![NONE; n];
        for j in 0..n {
            let mut pat: Vec<usize> = Vec::new();
            mark[j] = j;
            for &i in &lower_cols[j] {
                if mark[i] != j {
                    mark[i] = j;
                    pat.push(i);
                }
            }
            for &c in &children[j] {
                for &i in &col_patterns[c] {
                    if mark[i] != j {
                        mark[i] = j;
                        pat.push(i);
                    }
                }
            }
            pat.sort_unstable();
            col_patterns.push(pat);
        }
        drop(lower_cols);

        let mut l_col_ptr = Vec::with_capacity(n + 1);
        l_col_ptr.push(0);
        for pat in &col_patterns {
            l_col_ptr.push(l_col_ptr.last().unwrap() + 1 + pat.len());
        }
        let nnz_l = l_col_ptr[n];
        let mut l_row_idx = Vec::with_capacity(nnz_l);
        let mut row_counts = vec![0usize; n + 1];
        for (j, pat) in col_patterns.iter().enumerate() {
            l_row_idx.push(j);
            l_row_idx.extend_from_slice(pat);
            for &i in pat {
                row_counts[i + 1] += 1;
            }
        }
        for i in 0..n {
            row_counts[i + 1] += row_counts[i];
        }
        let row_ptr = row_counts.clone();
        let mut next = row_counts;
        let mut row_col = vec![0usize; row_ptr[n]];
        let mut row_pos = vec![0usize; row_ptr[n]];
        for j in 0..n {
            for p in (l_col_ptr[j] + 1)..l_col_ptr[j + 1] {
                let i = l_row_idx[p];
                row_col[next[i]] = j;
                row_pos[next[i]] = p;
                next[i] += 1;
            }
        }

        Ok(Arc::new(Self {
            n,
            perm,
            iperm,
            a_col_ptr: a.col_ptr().to_vec(),
            a_row_idx: a.row_idx().to_vec(),
            c_col_ptr,
            c_row_idx,
            a_to_c,
            l_col_ptr,
            l_row_idx,
            row_ptr,
            row_col,
            row_pos,
        }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_factor(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    /// Ordering with `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn matches(&self, a: &CscMatrix) -> bool {
        a.col_ptr() == self.a_col_ptr.as_slice() && a.row_idx() == self.a_row_idx.as_slice()
    }

    /// Numeric factorisation of a matrix with the analysed pattern.
    pub fn factorize(self: &Arc<Self>, a: &CscMatrix) -> Result<CholeskyFactor> {
        if !self.matches(a) {
            return Err(Error::Dimension(
                "matrix pattern differs from the analysed pattern".into(),
            ));
        }
        self.factorize_values(a.values())
    }

    /// Numeric factorisation from the value array of a matrix with the analysed pattern.
    pub fn factorize_values(self: &Arc<Self>, a_values: &[f64]) -> Result<CholeskyFactor> {
        debug_assert_eq!(a_values.len(), self.a_to_c.len());
        let mut c_values = vec![0.0; self.c_row_idx.len()];
        for (p, &q) in self.a_to_c.iter().enumerate() {
            if q != NONE {
                c_values[q] = a_values[p];
            }
        }
        self.factorize_permuted(&c_values)
    }

    fn factorize_permuted(self: &Arc<Self>, c_values: &[f64]) -> Result<CholeskyFactor> {
        let n = self.n;
        let mut lx = vec![0.0; self.nnz_factor()];
        let mut x = vec![0.0; n];
        for k in 0..n {
            for p in self.c_col_ptr[k]..self.c_col_ptr[k + 1] {
                x[self.c_row_idx[p]] = c_values[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for t in self.row_ptr[k]..self.row_ptr[k + 1] {
                let j = self.row_col[t];
                let pos = self.row_pos[t];
                let lkj = x[j] / lx[self.l_col_ptr[j]];
                x[j] = 0.0;
                let span = (self.l_col_ptr[j] + 1)..pos;
                for (&r, &v) in self.l_row_idx[span.clone()].iter().zip(&lx[span]) {
                    x[r] -= v * lkj;
                }
                d -= lkj * lkj;
                lx[pos] = lkj;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: self.perm[k],
                    value: d,
                });
            }
            lx[self.l_col_ptr[k]] = d.sqrt();
        }
        Ok(CholeskyFactor {
            symbolic: Arc::clone(self),
            values: lx,
        })
    }
}

/// Numeric factor `P A Pᵀ = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    symbolic: Arc<SymbolicCholesky>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    pub fn dim(&self) -> usize {
        self.symbolic.n
    }

    pub fn log_det(&self) -> f64 {
        let s = &self.symbolic;
        2.0 * (0..s.n).map(|j| self.values[s.l_col_ptr[j]].ln()).sum::<f64>()
    }

    fn forward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in 0..s.n {
            let start = s.l_col_ptr[j];
            y[j] /= self.values[start];
            let yj = y[j];
            if yj != 0.0 {
                for p in (start + 1)..s.l_col_ptr[j + 1] {
                    y[s.l_row_idx[p]] -= self.values[p] * yj;
                }
            }
        }
    }

    fn backward(&self, y: &mut [f64]) {
        let s = &self.symbolic;
        for j in (0..s.n).rev() {
            let start = s.l_col_ptr[j];
            let mut acc = y[j];
            for p in (start + 1)..s.l_col_ptr[j + 1] {
                acc -= self.values[p] * y[s.l_row_idx[p]];
            }
            y[j] = acc / self.values[start];
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        self.forward(&mut y);
        self.backward(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Maps standard normal `z` to a draw from `N(0, A⁻¹)`.
    pub fn correlate(&self, z: &[f64]) -> Vec<f64> {
        let s = &self.symbolic;
        let mut y = z.to_vec();
        self.backward(&mut y);
        let mut x = vec![0.0; s.n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Diagonal of `A⁻¹` at the requested indices, one solve per index.
    pub fn inverse_diagonal(&self, indices: &[usize]) -> Vec<f64> {
        let s = &self.symbolic;
        indices
            .iter()
            .map(|&i| {
                // (A⁻¹)_ii = ‖L⁻¹ P e_i‖²
                let mut y = vec![0.0; s.n];
                y[s.iperm[i]] = 1.0;
                self.forward(&mut y);
                y.iter().map(|v| v * v).sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn laplacian_2d(m: usize) -> CscMatrix {
        let n = m * m;
        let mut t = vec![];
        for r in 0..m {
            for c in 0..m {
                let i = r * m + c;
                t.push((i, i, 4.1));
                if c + 1 < m {
                    t.push((i, i + 1, -1.0));
                    t.push((i + 1, i, -1.0));
                }
                if r + 1 < m {
                    t.push((i, i + m, -1.0));
                    t.push((i + m, i, -1.0));
                }
            }
        }
        CscMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn logdet_and_solve_match_dense() {
        let a = laplacian_2d(7);
        let sym = SymbolicCholesky::analyze(&a).unwrap();
        let f = sym.factorize(&a).unwrap();
        let dense = a.to_dense();
        let chol = dense.clone().cholesky().unwrap();
        let dense_logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        assert!((f.log_det() - dense_logdet).abs() < 1e-10 * dense_logdet.abs());

        let b: Vec<f64> = (0..a.ncols()).map(|i| (i as f64).sin()).collect();
        let x = f.solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }

        let inv = dense.try_inverse().unwrap();
        let idx = [0, 5, 24, 48];
        for (k, v) in f.inverse_diagonal(&idx).iter().enumerate() {
            assert!((v - inv[(idx[k], idx[k])]).abs() < 1e-12);
        }
    }

    #[test]
    fn correlate_reproduces_inverse() {
        // E[x xᵀ] = A⁻¹ when x = correlate(z): check via the identity
        // Σ_k correlate(e_k) correlate(e_k)ᵀ = A⁻¹.
        let a = laplacian_2d(4);
        let f = SymbolicCholesky::analyze(&a).unwrap().factorize(&a).unwrap();
        let n = a.ncols();
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let mut z = vec![0.0; n];
            z[k] = 1.0;
            let x = nalgebra::DVector::from_vec(f.correlate(&z));
            acc += &x * x.transpose();
        }
        let inv = a.to_dense().try_inverse().unwrap();
        assert!((acc - inv).abs().max() < 1e-12);
    }

    #[test]
    fn refactorisation_reuses_symbolic() {
        let a = laplacian_2d(5);
        let sym = SymbolicCholesky::analyze(&a).unwrap();
        let f1 = sym.factorize(&a).unwrap();
        let f2 = sym.factorize(&a.scaled(2.0)).unwrap();
        let n = a.ncols() as f64;
        assert!((f2.log_det() - f1.log_det() - n * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        let sym = SymbolicCholesky::analyze(&a).unwrap();
        assert!(matches!(sym.factorize(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn pattern_mismatch_is_rejected() {
        let a = laplacian_2d(3);
        let sym = SymbolicCholesky::analyze(&a).unwrap();
        assert!(sym.factorize(&CscMatrix::identity(9)).is_err());
    }
}
