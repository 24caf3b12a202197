use nalgebra::DMatrix;

use super::LinearMap;
use crate::error::Result;

/// Compressed sparse row matrix. Only what the increment operators need.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row `(column, value)` lists.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < ncols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
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

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[s..e].iter().copied().zip(self.values[s..e].iter().copied())
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn matvec_transpose(&self, u: &[f64], v: &mut [f64]) {
        v.iter_mut().for_each(|x| *x = 0.0);
        for (i, &ui) in u.iter().enumerate().take(self.nrows) {
            if ui != 0.0 {
                for (c, val) in self.row(i) {
                    v[c] += val * ui;
                }
            }
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                a[(i, c)] += v;
            }
        }
        a
    }

    /// Product `self · other` computed in exact sparse arithmetic.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut rows = Vec::with_capacity(self.nrows);
        let mut acc = vec![0.0; other.ncols];
        let mut seen = vec![false; other.ncols];
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !seen[j] {
                        seen[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            let row = touched
                .drain(..)
                .filter_map(|j| {
                    seen[j] = false;
                    let v = std::mem::take(&mut acc[j]);
                    (v != 0.0).then_some((j, v))
                })
                .collect();
            rows.push(row);
        }
        CsrMatrix::from_rows(other.ncols, rows)
    }
}

impl LinearMap for CsrMatrix {
    fn rows(&self) -> usize {
        self.nrows
    }

    fn cols(&self) -> usize {
        self.ncols
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.matvec(x, y);
        Ok(())
    }

    fn apply_adjoint_into(&self, u: &[f64], v: &mut [f64]) -> Result<()> {
        self.matvec_transpose(u, v);
        Ok(())
    }

    fn to_dense(&self) -> Result<DMatrix<f64>> {
        Ok(self.dense())
    }
}
