//! Compressed sparse row structures for message passing.

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::tensor::Tensor;

/// Constant-coefficient CSR matrix used as a fixed aggregation operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<F> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<F>,
}

impl<F: Float> SparseMatrix<F> {
    /// Build from `(row, col, value)` triplets. Entries keep their relative
    /// order within a row; duplicates are kept as separate terms.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, F)]) -> Result<Self> {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            if r >= rows {
                return Err(TensorError::Index { op: "sparse row", index: r, len: rows });
            }
            if c >= cols {
                return Err(TensorError::Index { op: "sparse col", index: c, len: cols });
            }
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut fill = counts;
        let mut col_idx = vec![0; triplets.len()];
        let mut vals = vec![F::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            let at = fill[r];
            col_idx[at] = c;
            vals[at] = v;
            fill[r] += 1;
        }
        Ok(SparseMatrix { rows, cols, row_ptr, col_idx, vals })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// `out[r] += sum_c m[r, c] * x[c]` with `x` row-major of width `d`.
    pub fn spmm_acc(&self, x: &[F], d: usize, out: &mut [F]) {
        for r in 0..self.rows {
            let dst = &mut out[r * d..(r + 1) * d];
            for (c, v) in self.row_entries(r) {
                let src = &x[c * d..(c + 1) * d];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    /// `out[c] += sum_r m[r, c] * g[r]`, the transpose product used in backward.
    pub fn spmm_t_acc(&self, g: &[F], d: usize, out: &mut [F]) {
        for r in 0..self.rows {
            let src = &g[r * d..(r + 1) * d];
            for (c, v) in self.row_entries(r) {
                let dst = &mut out[c * d..(c + 1) * d];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Tensor<F> {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        let cols = self.cols;
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.data_mut()[r * cols + c] += v;
            }
        }
        t
    }
}

/// Neighbour lists in CSR form: `neighbors(u)` is the set attended by `u`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl Neighborhoods {
    pub fn from_lists(lists: &[Vec<usize>]) -> Result<Self> {
        let n = lists.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for list in lists {
            for &v in list {
                if v >= n {
                    return Err(TensorError::Index { op: "neighborhood", index: v, len: n });
                }
                col_idx.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Neighborhoods { n, row_ptr, col_idx })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[u]..self.row_ptr[u + 1]]
    }

    pub(crate) fn span(&self, u: usize) -> std::ops::Range<usize> {
        self.row_ptr[u]..self.row_ptr[u + 1]
    }

    pub fn edge_count(&self) -> usize {
        self.col_idx.len()
    }
}
