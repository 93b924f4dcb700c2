use super::Tensor;
use crate::error::{BgnnError, Result};

/// Compressed sparse row matrix. Never differentiated.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Validates the CSR invariants: offsets start at 0, end at nnz, never
    /// decrease; column indices in range and strictly increasing per row.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let op = "SparseMatrix::new";
        if row_offsets.len() != n_rows + 1 {
            return Err(BgnnError::shape(
                op,
                format!("{} row offsets for {n_rows} rows", row_offsets.len()),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(BgnnError::shape(op, "col_indices and values differ in length"));
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != values.len() {
            return Err(BgnnError::shape(op, "row offsets must span [0, nnz]"));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if hi < lo {
                return Err(BgnnError::shape(op, format!("row offsets decrease at row {r}")));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&c| c >= n_cols) {
                return Err(BgnnError::index(op, format!("column out of range in row {r}")));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(BgnnError::shape(op, format!("columns not strictly increasing in row {r}")));
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(BgnnError::index(
                    "SparseMatrix::from_triplets",
                    format!("({r}, {c}) outside {n_rows}x{n_cols}"),
                ));
            }
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs stored in row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        match self.col_indices[lo..hi].binary_search(&c) {
            Ok(pos) => self.values[lo + pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    /// `self · dense`.
    pub fn spmm(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.rows() != self.n_cols {
            return Err(BgnnError::shape(
                "spmm",
                format!("sparse {}x{} times dense {:?}", self.n_rows, self.n_cols, dense.shape()),
            ));
        }
        let n = dense.cols();
        let mut out = vec![0.0; self.n_rows * n];
        self.spmm_into(dense.data(), n, &mut out);
        Ok(Tensor::matrix(self.n_rows, n, out))
    }

    pub(crate) fn spmm_into(&self, dense: &[f64], n: usize, out: &mut [f64]) {
        for r in 0..self.n_rows {
            let out_row = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let d_row = &dense[c * n..(c + 1) * n];
                for (o, d) in out_row.iter_mut().zip(d_row) {
                    *o += v * d;
                }
            }
        }
    }

    /// `out += selfᵀ · g` with `g: n_rows×n`, without forming the transpose.
    pub(crate) fn spmm_transpose_into(&self, g: &[f64], n: usize, out: &mut [f64]) {
        for r in 0..self.n_rows {
            let g_row = &g[r * n..(r + 1) * n];
            for (c, v) in self.row(r) {
                let out_row = &mut out[c * n..(c + 1) * n];
                for (o, gv) in out_row.iter_mut().zip(g_row) {
                    *o += v * gv;
                }
            }
        }
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets: Vec<_> = (0..self.n_rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)))
            .collect();
        SparseMatrix::from_triplets(self.n_cols, self.n_rows, &triplets)
            .expect("transpose of a valid matrix is valid")
    }
}
