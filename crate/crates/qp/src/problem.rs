use crate::sparse::{CscMatrix, Triplets};
use crate::QpError;

/// minimize ½ xᵀPx + qᵀx + constant  subject to  Ax = b,  lower ≤ x ≤ upper.
///
/// `p` is stored with both triangles. Infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalQp {
    pub p: CscMatrix,
    pub q: Vec<f64>,
    pub a: CscMatrix,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constant: f64,
}

impl CanonicalQp {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        0.5 * crate::sparse::dot(x, &px) + crate::sparse::dot(&self.q, x) + self.constant
    }

    /// Shape, finiteness and symmetry checks. Crossed bounds are not an error
    /// here; the solver reports them as infeasible.
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let m = self.b.len();
        if self.p.nrows != n || self.p.ncols != n {
            return Err(QpError::Dimension(format!(
                "P is {}x{}, expected {n}x{n}",
                self.p.nrows, self.p.ncols
            )));
        }
        if self.a.nrows != m || self.a.ncols != n {
            return Err(QpError::Dimension(format!(
                "A is {}x{}, expected {m}x{n}",
                self.a.nrows, self.a.ncols
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension("bounds length differs from q".into()));
        }
        let finite = self.p.values.iter().all(|v| v.is_finite())
            && self.a.values.iter().all(|v| v.is_finite())
            && self.q.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.constant.is_finite();
        if !finite {
            return Err(QpError::NonFinite);
        }
        if self.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || self.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(QpError::NonFinite);
        }
        if !self.p.is_symmetric(1e-12) {
            return Err(QpError::NotSymmetric);
        }
        Ok(())
    }
}

/// Incremental construction of a [`CanonicalQp`].
#[derive(Debug, Clone, Default)]
pub struct QpBuilder {
    q: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    p: Vec<(usize, usize, f64)>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    constant: f64,
}

impl QpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts from an existing problem so it can be extended.
    pub fn from_qp(qp: &CanonicalQp) -> Self {
        Self {
            q: qp.q.clone(),
            lower: qp.lower.clone(),
            upper: qp.upper.clone(),
            p: qp.p.triplets().collect(),
            a: qp.a.triplets().collect(),
            b: qp.b.clone(),
            constant: qp.constant,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn add_var(&mut self, lower: f64, upper: f64) -> usize {
        self.q.push(0.0);
        self.lower.push(lower);
        self.upper.push(upper);
        self.q.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, lower: f64, upper: f64) -> Vec<usize> {
        (0..count).map(|_| self.add_var(lower, upper)).collect()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn add_linear(&mut self, var: usize, coeff: f64) {
        self.q[var] += coeff;
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    /// Adds `w · x_i · x_j` to the objective (for i == j this is `w · x_i²`).
    pub fn add_product(&mut self, i: usize, j: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        if i == j {
            self.p.push((i, i, 2.0 * w));
        } else {
            self.p.push((i, j, w));
            self.p.push((j, i, w));
        }
    }

    /// Adds `w · (Σ coeffᵢ xᵢ − target)²`.
    pub fn add_square(&mut self, combo: &[(usize, f64)], target: f64, w: f64) {
        if w == 0.0 {
            return;
        }
        for (a, &(i, ci)) in combo.iter().enumerate() {
            self.add_product(i, i, w * ci * ci);
            for &(j, cj) in &combo[a + 1..] {
                self.add_product(i, j, 2.0 * w * ci * cj);
            }
            self.q[i] -= 2.0 * w * ci * target;
        }
        self.constant += w * target * target;
    }

    /// Adds the equality row `Σ coeffᵢ xᵢ = rhs` and returns its index.
    pub fn add_eq(&mut self, row: &[(usize, f64)], rhs: f64) -> usize {
        let r = self.b.len();
        for &(j, v) in row {
            self.a.push((r, j, v));
        }
        self.b.push(rhs);
        r
    }

    pub fn build(self) -> CanonicalQp {
        let n = self.q.len();
        let m = self.b.len();
        let mut pt = Triplets::new(n, n);
        for &(i, j, v) in &self.p {
            pt.push(i, j, v);
        }
        let mut at = Triplets::new(m, n);
        for &(i, j, v) in &self.a {
            at.push(i, j, v);
        }
        CanonicalQp {
            p: pt.to_csc(),
            q: self.q,
            a: at.to_csc(),
            b: self.b,
            lower: self.lower,
            upper: self.upper,
            constant: self.constant,
        }
    }
}
