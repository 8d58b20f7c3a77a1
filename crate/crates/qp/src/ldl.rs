//! Sparse LDLᵀ factorization (up-looking, elimination-tree based) for
//! symmetric quasi-definite matrices. No pivoting: the caller is responsible
//! for handing in a matrix whose every symmetric permutation is factorizable.

use crate::ordering::{adjacency, invert, minimum_degree};
use crate::sparse::CscMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdlError {
    #[error("zero pivot at column {0}")]
    ZeroPivot(usize),
    #[error("non-finite pivot at column {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // permuted upper triangle of the input
    ku: CscMatrix,
    // position in `ku.values` for every upper entry of the original matrix
    map: Vec<usize>,
    parent: Vec<usize>,
    lnz: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl LdlFactor {
    /// Orders, analyses and factors the upper triangle of `k`
    /// (entries below the diagonal are ignored).
    pub fn new(k: &CscMatrix) -> Result<Self, LdlError> {
        let n = k.ncols;
        let upper = upper_part(k);
        let perm = minimum_degree(&adjacency(&upper));
        let iperm = invert(&perm);

        let mut entries = Vec::with_capacity(upper.nnz());
        for (i, j, v) in upper.triplets() {
            let (a, b) = (iperm[i], iperm[j]);
            entries.push((a.min(b), a.max(b), v));
        }
        // every diagonal must exist in the pattern
        for c in 0..n {
            entries.push((c, c, 0.0));
        }
        let ku = from_triplets_keep_zeros(n, &entries);

        let mut map = Vec::with_capacity(k.nnz());
        for (i, j, _) in k.triplets() {
            if i > j {
                map.push(NONE);
                continue;
            }
            let (a, b) = (iperm[i], iperm[j]);
            let (r, c) = (a.min(b), a.max(b));
            let range = ku.colptr[c]..ku.colptr[c + 1];
            let pos = ku.rowind[range.clone()].binary_search(&r).expect("pattern");
            map.push(range.start + pos);
        }

        let (parent, lnz_sym) = symbolic(&ku);
        let mut lp = vec![0; n + 1];
        for c in 0..n {
            lp[c + 1] = lp[c] + lnz_sym[c];
        }
        let nnz = lp[n];
        let mut f = Self {
            n,
            perm,
            iperm,
            ku,
            map,
            parent,
            lnz: vec![0; n],
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; n],
        };
        f.numeric()?;
        Ok(f)
    }

    /// Refactors a matrix with exactly the pattern given to [`LdlFactor::new`].
    pub fn refactor(&mut self, k: &CscMatrix) -> Result<(), LdlError> {
        assert_eq!(k.nnz(), self.map.len(), "pattern changed");
        self.ku.values.iter_mut().for_each(|v| *v = 0.0);
        for (p, &dst) in self.map.iter().enumerate() {
            if dst != NONE {
                self.ku.values[dst] += k.values[p];
            }
        }
        self.numeric()
    }

    fn numeric(&mut self) -> Result<(), LdlError> {
        let n = self.n;
        let ku = &self.ku;
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for k in 0..n {
            y[k] = 0.0;
            let mut top = n;
            flag[k] = k;
            self.lnz[k] = 0;
            for p in ku.colptr[k]..ku.colptr[k + 1] {
                let mut i = ku.rowind[p];
                y[i] += ku.values[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = self.lp[i];
                let end = start + self.lnz[i];
                for p in start..end {
                    y[self.li[p]] -= self.lx[p] * yi;
                }
                let l_ki = yi / self.d[i];
                dk -= l_ki * yi;
                self.li[end] = k;
                self.lx[end] = l_ki;
                self.lnz[i] += 1;
            }
            if dk == 0.0 {
                return Err(LdlError::ZeroPivot(self.perm[k]));
            }
            if !dk.is_finite() {
                return Err(LdlError::NonFinite(self.perm[k]));
            }
            self.d[k] = dk;
        }
        Ok(())
    }

    /// Solves K x = b in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for j in 0..n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j] + self.lnz[j] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..n {
            x[j] /= self.d[j];
        }
        for j in (0..n).rev() {
            let mut acc = x[j];
            for p in self.lp[j]..self.lp[j] + self.lnz[j] {
                acc -= self.lx[p] * x[self.li[p]];
            }
            x[j] = acc;
        }
        for (k, &i) in self.perm.iter().enumerate() {
            b[i] = x[k];
        }
    }

    /// Pivots indexed by the original (unpermuted) rows.
    pub fn pivots(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &d) in self.d.iter().enumerate() {
            out[self.perm[k]] = d;
        }
        out
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[allow(dead_code)]
    pub(crate) fn iperm(&self) -> &[usize] {
        &self.iperm
    }
}

fn upper_part(k: &CscMatrix) -> CscMatrix {
    let entries: Vec<_> = k.triplets().filter(|&(i, j, _)| i <= j).collect();
    from_triplets_keep_zeros(k.ncols, &entries)
}

// Like CscMatrix::from_triplets but keeps explicit zeros in the pattern.
fn from_triplets_keep_zeros(n: usize, entries: &[(usize, usize, f64)]) -> CscMatrix {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowind = Vec::with_capacity(sorted.len());
    let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut last = None;
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
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix {
        nrows: n,
        ncols: n,
        colptr,
        rowind,
        values,
    }
}

fn symbolic(ku: &CscMatrix) -> (Vec<usize>, Vec<usize>) {
    let n = ku.ncols;
    let mut parent = vec![NONE; n];
    let mut lnz = vec![0usize; n];
    let mut flag = vec![NONE; n];
    for k in 0..n {
        flag[k] = k;
        for p in ku.colptr[k]..ku.colptr[k + 1] {
            let mut i = ku.rowind[p];
            if i < k {
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
    }
    (parent, lnz)
}
