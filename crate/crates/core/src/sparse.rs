//! Compressed sparse row matrices and the kernels used by meta-path
//! propagation: degree normalization, sparse-dense and sparse-sparse products.

use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::graph::GraphError;

/// Canonical CSR matrix: column indices strictly increasing within a row and
/// no explicitly stored zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

// Below this many rows the rayon split costs more than it saves.
const PAR_ROWS: usize = 256;

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a canonical matrix from `(row, col, value)` triplets. Duplicate
    /// coordinates are summed and resulting zeros dropped.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, GraphError> {
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(GraphError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    shape: (rows, cols),
                });
            }
            if !v.is_finite() {
                return Err(GraphError::NonFinite {
                    context: format!("triplet ({r}, {c})"),
                });
            }
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));

        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row_of = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_of.push(r);
                last = Some((r, c));
            }
        }
        // Drop cancellations so the pattern stays canonical.
        let mut keep_cols = Vec::with_capacity(col_indices.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((c, v), r) in col_indices.into_iter().zip(values).zip(row_of) {
            if v != 0.0 {
                keep_cols.push(c);
                keep_vals.push(v);
                row_offsets[r + 1] += 1;
            }
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices: keep_cols,
            values: keep_vals,
        })
    }

    /// Wraps raw CSR arrays after checking every structural invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, GraphError> {
        let invalid = |msg: String| Err(GraphError::InvalidCsr(msg));
        if row_offsets.len() != rows + 1 {
            return invalid(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                rows + 1
            ));
        }
        if row_offsets[0] != 0 || row_offsets[rows] != col_indices.len() {
            return invalid("row_offsets must start at 0 and end at nnz".into());
        }
        if col_indices.len() != values.len() {
            return invalid("col_indices and values differ in length".into());
        }
        for r in 0..rows {
            let (lo, hi) = (row_offsets[r], row_offsets[r + 1]);
            if lo > hi {
                return invalid(format!("row_offsets decreases at row {r}"));
            }
            let cols_r = &col_indices[lo..hi];
            if cols_r.windows(2).any(|w| w[0] >= w[1]) {
                return invalid(format!("row {r} column indices not strictly increasing"));
            }
            if cols_r.iter().any(|&c| c >= cols) {
                return invalid(format!("row {r} has a column index out of range"));
            }
        }
        if values.contains(&0.0) {
            return invalid("explicit zero stored".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite {
                context: "csr values".into(),
            });
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn from_dense(dense: &DenseMatrix) -> Self {
        let mut row_offsets = Vec::with_capacity(dense.rows() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..dense.rows() {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            rows: dense.rows(),
            cols: dense.cols(),
            row_offsets,
            col_indices,
            values,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
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

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (r, c, v) in self.iter() {
            let slot = next[c];
            col_indices[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (r, c, v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for (_, c, v) in self.iter() {
            sums[c] += v;
        }
        sums
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Pattern and values symmetric within an absolute tolerance.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let t = self.transpose();
        if t.col_indices != self.col_indices || t.row_offsets != self.row_offsets {
            return false;
        }
        self.values
            .iter()
            .zip(&t.values)
            .all(|(a, b)| (a - b).abs() <= tol)
    }
}

/// Degree normalization `D_r^{-1/2} M D_c^{-1/2}` generalized to rectangular
/// relations. Entries whose row or column degree is zero are dropped.
pub fn normalize_relation(m: &SparseMatrix) -> Result<SparseMatrix, GraphError> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(GraphError::NonFinite {
            context: "relation values".into(),
        });
    }
    if m.values.iter().any(|&v| v < 0.0) {
        return Err(GraphError::NegativeWeight);
    }
    let row_scale: Vec<f64> = m
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { d.sqrt().recip() } else { 0.0 })
        .collect();
    let col_scale: Vec<f64> = m
        .col_sums()
        .into_iter()
        .map(|d| if d > 0.0 { d.sqrt().recip() } else { 0.0 })
        .collect();
    let mut triplets = Vec::with_capacity(m.nnz());
    for (r, c, v) in m.iter() {
        let scaled = v * row_scale[r] * col_scale[c];
        if scaled != 0.0 {
            triplets.push((r, c, scaled));
        }
    }
    SparseMatrix::from_triplets(m.rows, m.cols, &triplets)
}

/// Sparse times dense. Rows are independent, so the parallel split does not
/// change the result.
pub fn spmm(a: &SparseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, GraphError> {
    if a.cols != b.rows() {
        return Err(GraphError::DimensionMismatch {
            op: "spmm",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let width = b.cols();
    let mut out = DenseMatrix::zeros(a.rows, width);
    if width == 0 {
        return Ok(out);
    }
    let fill_row = |r: usize, out_row: &mut [f64]| {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            for (o, x) in out_row.iter_mut().zip(b.row(c)) {
                *o += v * x;
            }
        }
    };
    if a.rows >= PAR_ROWS {
        out.as_mut_slice()
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| fill_row(r, row));
    } else {
        out.as_mut_slice()
            .chunks_mut(width)
            .enumerate()
            .for_each(|(r, row)| fill_row(r, row));
    }
    Ok(out)
}

/// Sparse times sparse (row-wise Gustavson accumulation).
pub fn spspmm(a: &SparseMatrix, b: &SparseMatrix) -> Result<SparseMatrix, GraphError> {
    if a.cols != b.rows {
        return Err(GraphError::DimensionMismatch {
            op: "spspmm",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let row_product = |r: usize, acc: &mut Vec<f64>, seen: &mut Vec<bool>| {
        let mut touched = Vec::new();
        let (acols, avals) = a.row(r);
        for (&k, &av) in acols.iter().zip(avals) {
            let (bcols, bvals) = b.row(k);
            for (&c, &bv) in bcols.iter().zip(bvals) {
                if !seen[c] {
                    seen[c] = true;
                    touched.push(c);
                }
                acc[c] += av * bv;
            }
        }
        touched.sort_unstable();
        let mut entries = Vec::with_capacity(touched.len());
        for c in touched {
            let v = acc[c];
            acc[c] = 0.0;
            seen[c] = false;
            if v != 0.0 {
                entries.push((c, v));
            }
        }
        entries
    };
    let rows: Vec<Vec<(usize, f64)>> = if a.rows >= PAR_ROWS {
        (0..a.rows)
            .into_par_iter()
            .map_init(
                || (vec![0.0; b.cols], vec![false; b.cols]),
                |(acc, seen), r| row_product(r, acc, seen),
            )
            .collect()
    } else {
        let mut acc = vec![0.0; b.cols];
        let mut seen = vec![false; b.cols];
        (0..a.rows)
            .map(|r| row_product(r, &mut acc, &mut seen))
            .collect()
    };
    let nnz = rows.iter().map(Vec::len).sum();
    let mut row_offsets = Vec::with_capacity(a.rows + 1);
    let mut col_indices = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_offsets.push(0);
    for row in rows {
        for (c, v) in row {
            col_indices.push(c);
            values.push(v);
        }
        row_offsets.push(col_indices.len());
    }
    Ok(SparseMatrix {
        rows: a.rows,
        cols: b.cols,
        row_offsets,
        col_indices,
        values,
    })
}
