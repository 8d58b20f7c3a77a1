//! Compressed sparse column storage and the handful of kernels the solver needs.

/// Coordinate-format accumulator. Duplicate entries are summed on conversion.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Grows the shape; existing entries are untouched.
    pub fn resize(&mut self, nrows: usize, ncols: usize) {
        assert!(nrows >= self.nrows && ncols >= self.ncols);
        self.nrows = nrows;
        self.ncols = ncols;
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        assert!(
            row < self.nrows && col < self.ncols,
            "entry ({row}, {col}) outside {}x{}",
            self.nrows,
            self.ncols
        );
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Adds `value` at (i, j) and (j, i), once on the diagonal.
    pub fn push_sym(&mut self, i: usize, j: usize, value: f64) {
        self.push(i, j, value);
        if i != j {
            self.push(j, i, value);
        }
    }

    pub fn to_csc(&self) -> CscMatrix {
        CscMatrix::from_triplets(self.nrows, self.ncols, &self.entries)
    }
}

/// Column-compressed sparse matrix with sorted row indices and no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub colptr: Vec<usize>,
    pub rowind: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowind: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowind: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowind = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rowind.push(r);
                values.push(v);
                colptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..ncols {
            colptr[c + 1] += colptr[c];
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowind,
            values,
        }
    }

    /// Builds from dense row-major data, dropping exact zeros.
    pub fn from_dense(nrows: usize, ncols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        let mut entries = Vec::new();
        for r in 0..nrows {
            for c in 0..ncols {
                let v = data[r * ncols + c];
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &entries)
    }

    pub fn nnz(&self) -> usize {
        self.rowind.len()
    }

    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.colptr[j]..self.colptr[j + 1];
        self.rowind[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.ncols).flat_map(move |j| self.col(j).map(move |(i, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.colptr[j]..self.colptr[j + 1];
        match self.rowind[range.clone()].binary_search(&i) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// y += alpha * A x
    pub fn gemv(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let s = alpha * xj;
            for p in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowind[p]] += self.values[p] * s;
            }
        }
    }

    /// y += alpha * A^T x
    pub fn gemv_t(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc += self.values[p] * x[self.rowind[p]];
            }
            *yj += alpha * acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.gemv(1.0, x, &mut y);
        y
    }

    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.gemv_t(1.0, x, &mut y);
        y
    }

    pub fn transpose(&self) -> CscMatrix {
        let entries: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        CscMatrix::from_triplets(self.ncols, self.nrows, &entries)
    }

    /// Returns diag(left) * A * diag(right).
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> CscMatrix {
        let mut out = self.clone();
        for j in 0..self.ncols {
            for p in out.colptr[j]..out.colptr[j + 1] {
                out.values[p] *= left[out.rowind[p]] * right[j];
            }
        }
        out
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        self.triplets()
            .all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol * (1.0 + v.abs()))
    }

    /// Column-wise infinity norms.
    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.col(j).fold(0.0f64, |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    /// Row-wise infinity norms.
    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.nrows];
        for (i, _, v) in self.triplets() {
            out[i] = out[i].max(v.abs());
        }
        out
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> CscMatrix {
        let mut colptr = Vec::with_capacity(cols.len() + 1);
        colptr.push(0);
        let mut rowind = Vec::new();
        let mut values = Vec::new();
        for &j in cols {
            for (i, v) in self.col(j) {
                rowind.push(i);
                values.push(v);
            }
            colptr.push(rowind.len());
        }
        CscMatrix {
            nrows: self.nrows,
            ncols: cols.len(),
            colptr,
            rowind,
            values,
        }
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CscMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(0, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn products_match_dense() {
        let dense = [1.0, 0.0, 2.0, 0.0, -3.0, 4.0];
        let m = CscMatrix::from_dense(2, 3, &dense);
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]), vec![7.0, 6.0]);
        assert_eq!(m.mul_t_vec(&[1.0, 1.0]), vec![1.0, -3.0, 6.0]);
        assert_eq!(m.transpose().mul_vec(&[1.0, 1.0]), vec![1.0, -3.0, 6.0]);
    }
}
