//! Minimal compressed-row sparse matrix for the lifted dynamics.

use std::ops::Range;

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicate entries are summed; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(t.len());
        let mut vals: Vec<f64> = Vec::with_capacity(t.len());
        let mut rows = Vec::with_capacity(t.len());
        for (i, j, v) in t {
            if let (Some(&li), Some(&lj)) = (rows.last(), cols.last()) {
                if li == i && lj == j {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(i);
            cols.push(j);
            vals.push(v);
        }
        let keep: Vec<bool> = vals.iter().map(|&v| v != 0.0).collect();
        let mut c2 = Vec::with_capacity(cols.len());
        let mut v2 = Vec::with_capacity(vals.len());
        for k in 0..cols.len() {
            if keep[k] {
                row_ptr[rows[k] + 1] += 1;
                c2.push(cols[k]);
                v2.push(vals[k]);
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { nrows, ncols, row_ptr, cols: c2, vals: v2 }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.dense_block(0..self.nrows, 0..self.ncols)
    }

    pub fn dense_block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for i in rows.clone() {
            for (j, v) in self.row(i) {
                if cols.contains(&j) {
                    m[(i - rows.start, j - cols.start)] = v;
                }
            }
        }
        m
    }

    /// Principal submatrix on `idx` (dense).
    pub fn principal(&self, idx: &[usize]) -> DMatrix<f64> {
        self.submatrix(idx, idx)
    }

    /// Dense submatrix `M[rows, cols]`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut pos = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            pos[c] = k;
        }
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if pos[j] != usize::MAX {
                    m[(a, pos[j])] = v;
                }
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Row vector times matrix, `y^T = x^T M`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += xi * v;
                }
            }
        }
        y
    }
}
