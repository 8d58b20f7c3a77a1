//! Epigraph rewrites that turn non-smooth penalty terms into canonical QP data.

use crate::problem::{CanonicalQp, QpBuilder};

/// One row of a linear operator: `Σ coeff·x[var] − offset`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiffRow {
    pub terms: Vec<(usize, f64)>,
    pub offset: f64,
}

/// A list of affine rows, usually successive differences of a time series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiffOperator {
    pub rows: Vec<DiffRow>,
}

impl DiffOperator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_row(&mut self, terms: Vec<(usize, f64)>, offset: f64) {
        self.rows.push(DiffRow { terms, offset });
    }

    /// `x[v_{k+1}] − x[v_k]` for consecutive entries of `vars`.
    pub fn first_difference(vars: &[usize]) -> Self {
        let combos: Vec<Vec<(usize, f64)>> = vars.iter().map(|&v| vec![(v, 1.0)]).collect();
        Self::first_difference_of(&combos, None)
    }

    /// Successive differences of linear combinations. When `previous` is
    /// given, an extra leading row `combo_0 − previous` ties the series to an
    /// already realized value.
    pub fn first_difference_of(combos: &[Vec<(usize, f64)>], previous: Option<f64>) -> Self {
        let mut op = Self::new();
        if let (Some(prev), Some(first)) = (previous, combos.first()) {
            op.push_row(first.clone(), prev);
        }
        for w in combos.windows(2) {
            let mut terms = w[1].clone();
            terms.extend(w[0].iter().map(|&(v, c)| (v, -c)));
            op.push_row(terms, 0.0);
        }
        op
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() - r.offset)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Extension {
    pub qp: CanonicalQp,
    pub d_plus: Vec<usize>,
    pub d_minus: Vec<usize>,
}

/// Adds `Σ w_j |(Dx)_j|` through split variables `Dx = d⁺ − d⁻`, `d± ≥ 0`.
pub fn l1_to_qp(weights: &[f64], d: &DiffOperator, base: &CanonicalQp) -> L1Extension {
    let mut b = QpBuilder::from_qp(base);
    let (d_plus, d_minus) = b.add_l1(weights, d);
    L1Extension {
        qp: b.build(),
        d_plus,
        d_minus,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeExtension {
    pub qp: CanonicalQp,
    pub s_hi: usize,
    pub s_lo: usize,
}

/// Adds `α (max_t x[vars_t] − min_t x[vars_t])` via two scalar envelopes
/// `s_lo ≤ x[vars_t] ≤ s_hi`.
pub fn range_to_qp(alpha_range: f64, vars: &[usize], base: &CanonicalQp) -> RangeExtension {
    let mut b = QpBuilder::from_qp(base);
    let (s_hi, s_lo) = b.add_range(alpha_range, vars);
    RangeExtension { qp: b.build(), s_hi, s_lo }
}

impl QpBuilder {
    /// In-place form of [`l1_to_qp`]; returns the indices of `d⁺` and `d⁻`.
    pub fn add_l1(&mut self, weights: &[f64], d: &DiffOperator) -> (Vec<usize>, Vec<usize>) {
        assert_eq!(weights.len(), d.len(), "one weight per operator row");
        assert!(weights.iter().all(|&w| w >= 0.0), "weights must be nonnegative");
        let mut d_plus = Vec::with_capacity(d.len());
        let mut d_minus = Vec::with_capacity(d.len());
        for (row, &w) in d.rows.iter().zip(weights) {
            let dp = self.add_var(0.0, f64::INFINITY);
            let dm = self.add_var(0.0, f64::INFINITY);
            self.add_linear(dp, w);
            self.add_linear(dm, w);
            let mut terms = row.terms.clone();
            terms.push((dp, -1.0));
            terms.push((dm, 1.0));
            self.add_eq(&terms, row.offset);
            d_plus.push(dp);
            d_minus.push(dm);
        }
        (d_plus, d_minus)
    }

    /// In-place form of [`range_to_qp`]; returns `(s_hi, s_lo)`.
    pub fn add_range(&mut self, alpha_range: f64, vars: &[usize]) -> (usize, usize) {
        assert!(alpha_range >= 0.0, "range weight must be nonnegative");
        let s_hi = self.add_var(f64::NEG_INFINITY, f64::INFINITY);
        let s_lo = self.add_var(f64::NEG_INFINITY, f64::INFINITY);
        self.add_linear(s_hi, alpha_range);
        self.add_linear(s_lo, -alpha_range);
        for &v in vars {
            let w_hi = self.add_var(0.0, f64::INFINITY);
            self.add_eq(&[(v, 1.0), (s_hi, -1.0), (w_hi, 1.0)], 0.0);
            let w_lo = self.add_var(0.0, f64::INFINITY);
            self.add_eq(&[(v, 1.0), (s_lo, -1.0), (w_lo, -1.0)], 0.0);
        }
        (s_hi, s_lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_difference_with_previous() {
        let op = DiffOperator::first_difference_of(&[vec![(0, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)]], Some(1.0));
        assert_eq!(op.apply(&[2.0, 5.0, 4.0]), vec![1.0, 3.0, -1.0]);
    }
}
