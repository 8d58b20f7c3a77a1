//! ADMM operator splitting for [`CanonicalQp`].
//!
//! Equality rows live in a quasi-definite KKT system; box rows are folded into
//! its diagonal. Iterates are kept in the Ruiz-scaled space; every reported
//! quantity is unscaled.

use crate::ldl::LdlFactor;
use crate::problem::CanonicalQp;
use crate::sparse::{dot, inf_norm, CscMatrix};
use crate::QpError;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    /// Relative part of the tolerance, multiplied by the magnitude of the
    /// terms that make up each residual.
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Proximal regularization on x.
    pub sigma: f64,
    /// Over-relaxation.
    pub alpha: f64,
    /// Initial penalty.
    pub rho: f64,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub polish: bool,
    pub scaling_iters: usize,
    pub check_interval: usize,
    pub infeasibility_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            sigma: 1e-6,
            alpha: 1.6,
            rho: 0.1,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            polish: true,
            scaling_iters: 10,
            check_interval: 5,
            infeasibility_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    /// Multipliers of the box constraints (≤ 0 at an active lower bound, ≥ 0 at an upper).
    pub z: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.x.clone(),
            y: Some(self.y.clone()),
            z: Some(self.z.clone()),
        }
    }
}

/// Starting point in unscaled variables. Missing duals start at zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const POLISH_DELTA: f64 = 1e-7;
const POLISH_REFINE: usize = 5;

/// Persistent solver state for one problem structure. The linear cost can be
/// replaced between solves; the factorization and the last iterate are kept,
/// so repeated solves with slowly varying costs start warm.
#[derive(Debug, Clone)]
pub struct QpWorkspace {
    prob: CanonicalQp,
    settings: QpSettings,
    n: usize,
    m: usize,
    crossed_bounds: bool,
    // scaling: x = D x̂, constraint rows scaled by E, cost by c
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
    p_s: CscMatrix,
    a_s: CscMatrix,
    q_s: Vec<f64>,
    b_s: Vec<f64>,
    l_s: Vec<f64>,
    u_s: Vec<f64>,
    rho: f64,
    rho_b: Vec<f64>,
    kkt: CscMatrix,
    // value slots inside `kkt` that depend on rho
    diag_x_slot: Vec<usize>,
    diag_eq_slot: Vec<usize>,
    factor: Option<LdlFactor>,
    x: Vec<f64>,
    z_b: Vec<f64>,
    y_b: Vec<f64>,
    y_eq: Vec<f64>,
}

impl QpWorkspace {
    pub fn new(prob: &CanonicalQp, settings: &QpSettings) -> Result<Self, QpError> {
        prob.validate()?;
        let n = prob.num_vars();
        let m = prob.num_eq();
        let crossed_bounds = prob.lower.iter().zip(&prob.upper).any(|(l, u)| l > u);

        let (d, e, c) = ruiz(prob, settings.scaling_iters);
        let p_s = prob.p.scaled(&d, &d).scaled(&vec![c; n], &vec![1.0; n]);
        let a_s = prob.a.scaled(&e, &d);
        let q_s: Vec<f64> = prob.q.iter().zip(&d).map(|(q, d)| c * d * q).collect();
        let b_s: Vec<f64> = prob.b.iter().zip(&e).map(|(b, e)| e * b).collect();
        let l_s: Vec<f64> = prob.lower.iter().zip(&d).map(|(l, d)| l / d).collect();
        let u_s: Vec<f64> = prob.upper.iter().zip(&d).map(|(u, d)| u / d).collect();

        let (kkt, diag_x_slot, diag_eq_slot) = kkt_pattern(&p_s, &a_s);
        let mut ws = Self {
            prob: prob.clone(),
            settings: settings.clone(),
            n,
            m,
            crossed_bounds,
            d,
            e,
            c,
            p_s,
            a_s,
            q_s,
            b_s,
            l_s,
            u_s,
            rho: settings.rho.clamp(RHO_MIN, RHO_MAX),
            rho_b: vec![0.0; n],
            kkt,
            diag_x_slot,
            diag_eq_slot,
            factor: None,
            x: vec![0.0; n],
            z_b: vec![0.0; n],
            y_b: vec![0.0; n],
            y_eq: vec![0.0; m],
        };
        ws.z_b = (0..n).map(|j| 0.0f64.clamp(ws.l_s[j].min(ws.u_s[j]), ws.u_s[j].max(ws.l_s[j]))).collect();
        if !crossed_bounds {
            ws.set_rho(ws.rho)?;
        }
        Ok(ws)
    }

    pub fn problem(&self) -> &CanonicalQp {
        &self.prob
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Replaces q; keeps the scaling, factorization and iterate.
    pub fn update_linear_cost(&mut self, q: &[f64]) {
        assert_eq!(q.len(), self.n);
        self.prob.q.copy_from_slice(q);
        for j in 0..self.n {
            self.q_s[j] = self.c * self.d[j] * q[j];
        }
    }

    pub fn update_constant(&mut self, constant: f64) {
        self.prob.constant = constant;
    }

    pub fn warm_start(&mut self, ws: &WarmStart) {
        assert_eq!(ws.x.len(), self.n);
        for j in 0..self.n {
            self.x[j] = ws.x[j] / self.d[j];
            self.z_b[j] = self.x[j].clamp(self.l_s[j], self.u_s[j]);
        }
        match &ws.y {
            Some(y) => {
                for r in 0..self.m {
                    self.y_eq[r] = self.c * y[r] / self.e[r];
                }
            }
            None => self.y_eq.iter_mut().for_each(|v| *v = 0.0),
        }
        match &ws.z {
            Some(z) => {
                for j in 0..self.n {
                    self.y_b[j] = self.c * self.d[j] * z[j];
                }
            }
            None => self.y_b.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    fn set_rho(&mut self, rho: f64) -> Result<(), QpError> {
        self.rho = rho.clamp(RHO_MIN, RHO_MAX);
        for j in 0..self.n {
            let (l, u) = (self.l_s[j], self.u_s[j]);
            self.rho_b[j] = if l == f64::NEG_INFINITY && u == f64::INFINITY {
                RHO_MIN
            } else if l == u {
                RHO_EQ_FACTOR * self.rho
            } else {
                self.rho
            };
        }
        for j in 0..self.n {
            let slot = self.diag_x_slot[j];
            self.kkt.values[slot] = self.p_s.get(j, j) + self.settings.sigma + self.rho_b[j];
        }
        let rho_eq = RHO_EQ_FACTOR * self.rho;
        for r in 0..self.m {
            self.kkt.values[self.diag_eq_slot[r]] = -1.0 / rho_eq;
        }
        match &mut self.factor {
            Some(f) => f.refactor(&self.kkt)?,
            None => self.factor = Some(LdlFactor::new(&self.kkt)?),
        }
        let piv = self.factor.as_ref().unwrap().pivots();
        if piv[..self.n].iter().any(|&d| d <= 0.0) {
            return Err(QpError::NotConvex);
        }
        Ok(())
    }

    pub fn solve(&mut self) -> QpSolution {
        let n = self.n;
        let m = self.m;
        if self.crossed_bounds {
            return self.terminal(QpStatus::Infeasible, 0, false);
        }
        let s = self.settings.clone();
        let rho_eq = |rho: f64| RHO_EQ_FACTOR * rho;

        let mut rhs = vec![0.0; n + m];
        let mut x_prev = vec![0.0; n];
        let mut y_b_prev = vec![0.0; n];
        let mut y_eq_prev = vec![0.0; m];
        let mut next_polish_level = f64::INFINITY;
        let mut iter = 0usize;

        let (mut prim, mut dual, mut tol_p, mut tol_d) = self.residuals();
        if prim <= tol_p && dual <= tol_d {
            return self.terminal(QpStatus::Solved, 0, false);
        }

        while iter < s.max_iter {
            iter += 1;
            x_prev.copy_from_slice(&self.x);
            y_b_prev.copy_from_slice(&self.y_b);
            y_eq_prev.copy_from_slice(&self.y_eq);

            let r_eq = rho_eq(self.rho);
            for j in 0..n {
                rhs[j] = s.sigma * self.x[j] - self.q_s[j] + self.rho_b[j] * self.z_b[j] - self.y_b[j];
            }
            for r in 0..m {
                rhs[n + r] = self.b_s[r] - self.y_eq[r] / r_eq;
            }
            self.factor.as_ref().unwrap().solve_in_place(&mut rhs);

            for j in 0..n {
                let xt = rhs[j];
                let x_relax = s.alpha * xt + (1.0 - s.alpha) * self.x[j];
                let z_relax = s.alpha * xt + (1.0 - s.alpha) * self.z_b[j];
                let z_new = (z_relax + self.y_b[j] / self.rho_b[j]).clamp(self.l_s[j], self.u_s[j]);
                self.y_b[j] += self.rho_b[j] * (z_relax - z_new);
                self.z_b[j] = z_new;
                self.x[j] = x_relax;
            }
            for r in 0..m {
                let zt = self.b_s[r] + (rhs[n + r] - self.y_eq[r]) / r_eq;
                self.y_eq[r] += r_eq * s.alpha * (zt - self.b_s[r]);
            }

            let check = iter % s.check_interval.max(1) == 0;
            let adapt = s.adaptive_rho && iter % s.adaptive_rho_interval.max(1) == 0;
            if !(check || adapt) {
                continue;
            }
            (prim, dual, tol_p, tol_d) = self.residuals();
            let converged = prim <= tol_p && dual <= tol_d;
            let level = (prim / tol_p).max(dual / tol_d);
            if s.polish && (converged || level <= next_polish_level.min(1e3)) {
                if let Some(sol) = self.try_polish(iter) {
                    return sol;
                }
                next_polish_level = level * 0.1;
            }
            if converged {
                return self.terminal(QpStatus::Solved, iter, false);
            }
            if let Some(status) = self.infeasibility(&x_prev, &y_b_prev, &y_eq_prev) {
                return self.terminal(status, iter, false);
            }
            if adapt {
                let new_rho = self.rho_estimate();
                if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
                    if self.set_rho(new_rho).is_err() {
                        // keep the previous factorization usable
                        let old = self.rho;
                        let _ = self.set_rho(old);
                    }
                }
            }
        }
        if s.polish {
            if let Some(sol) = self.try_polish(iter) {
                return sol;
            }
        }
        self.terminal(QpStatus::MaxIterations, iter, false)
    }

    fn unscaled(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..self.n).map(|j| self.d[j] * self.x[j]).collect();
        let y: Vec<f64> = (0..self.m).map(|r| self.e[r] * self.y_eq[r] / self.c).collect();
        let z: Vec<f64> = (0..self.n).map(|j| self.y_b[j] / (self.c * self.d[j])).collect();
        (x, y, z)
    }

    /// Residuals followed by the primal and dual tolerances they are held to.
    fn residuals(&self) -> (f64, f64, f64, f64) {
        let (x, y, z) = self.unscaled();
        let (prim, dual) = kkt_residuals(&self.prob, &x, &y, &z);
        let (tol_p, tol_d) = self.tolerances(&x, &y, &z);
        (prim, dual, tol_p, tol_d)
    }

    fn tolerances(&self, x: &[f64], y: &[f64], z: &[f64]) -> (f64, f64) {
        let s = &self.settings;
        let (sp, sd) = kkt_scales(&self.prob, x, y, z);
        (s.eps_abs + s.eps_rel * sp, s.eps_abs + s.eps_rel * sd)
    }

    fn terminal(&self, status: QpStatus, iterations: usize, polished: bool) -> QpSolution {
        let (x, y, z) = self.unscaled();
        let (primal_residual, dual_residual) = if self.crossed_bounds {
            (f64::INFINITY, f64::INFINITY)
        } else {
            kkt_residuals(&self.prob, &x, &y, &z)
        };
        let objective = self.prob.objective(&x);
        QpSolution {
            x,
            y,
            z,
            objective,
            status,
            primal_residual,
            dual_residual,
            iterations,
            polished,
        }
    }

    fn rho_estimate(&self) -> f64 {
        let n = self.n;
        let ax = self.a_s.mul_vec(&self.x);
        let mut prim: f64 = 0.0;
        let mut cx: f64 = 0.0;
        let mut zn: f64 = 0.0;
        for r in 0..self.m {
            prim = prim.max((ax[r] - self.b_s[r]).abs());
            cx = cx.max(ax[r].abs());
            zn = zn.max(self.b_s[r].abs());
        }
        for j in 0..n {
            prim = prim.max((self.x[j] - self.z_b[j]).abs());
            cx = cx.max(self.x[j].abs());
            zn = zn.max(self.z_b[j].abs());
        }
        let px = self.p_s.mul_vec(&self.x);
        let mut aty = self.a_s.mul_t_vec(&self.y_eq);
        for j in 0..n {
            aty[j] += self.y_b[j];
        }
        let dual = (0..n)
            .map(|j| (px[j] + self.q_s[j] + aty[j]).abs())
            .fold(0.0f64, f64::max);
        let denom_p = cx.max(zn).max(1e-10);
        let denom_d = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&self.q_s)).max(1e-10);
        let ratio = (prim / denom_p) / (dual / denom_d).max(1e-12);
        (self.rho * ratio.max(1e-12).sqrt()).clamp(RHO_MIN, RHO_MAX)
    }

    fn infeasibility(&self, x_prev: &[f64], y_b_prev: &[f64], y_eq_prev: &[f64]) -> Option<QpStatus> {
        let tol = self.settings.infeasibility_tol;
        let n = self.n;
        // primal: δy with Cᵀδy ≈ 0 and support function negative
        let dyb: Vec<f64> = (0..n).map(|j| self.y_b[j] - y_b_prev[j]).collect();
        let dye: Vec<f64> = (0..self.m).map(|r| self.y_eq[r] - y_eq_prev[r]).collect();
        let norm_dy = inf_norm(&dyb).max(inf_norm(&dye));
        if norm_dy > 1e-12 {
            let mut cty = self.a_s.mul_t_vec(&dye);
            for j in 0..n {
                cty[j] += dyb[j];
            }
            let mut support = dot(&self.b_s, &dye);
            let mut finite = true;
            for j in 0..n {
                let v = dyb[j];
                if v > 0.0 {
                    if self.u_s[j] == f64::INFINITY {
                        finite = false;
                        break;
                    }
                    support += self.u_s[j] * v;
                } else if v < 0.0 {
                    if self.l_s[j] == f64::NEG_INFINITY {
                        finite = false;
                        break;
                    }
                    support += self.l_s[j] * v;
                }
            }
            if finite && inf_norm(&cty) <= tol * norm_dy && support < -tol * norm_dy {
                return Some(QpStatus::Infeasible);
            }
        }
        // dual: δx with Pδx ≈ 0, qᵀδx < 0, Cδx in the recession cone
        let dx: Vec<f64> = (0..n).map(|j| self.x[j] - x_prev[j]).collect();
        let norm_dx = inf_norm(&dx);
        if norm_dx > 1e-12 {
            let pdx = self.p_s.mul_vec(&dx);
            if inf_norm(&pdx) <= tol * norm_dx && dot(&self.q_s, &dx) < -tol * norm_dx {
                let adx = self.a_s.mul_vec(&dx);
                let eq_ok = inf_norm(&adx) <= tol * norm_dx;
                let box_ok = (0..n).all(|j| {
                    let v = dx[j];
                    let ok_up = self.u_s[j] == f64::INFINITY || v <= tol * norm_dx;
                    let ok_lo = self.l_s[j] == f64::NEG_INFINITY || v >= -tol * norm_dx;
                    ok_up && ok_lo
                });
                if eq_ok && box_ok {
                    return Some(QpStatus::Unbounded);
                }
            }
        }
        None
    }

    /// Guesses the active bounds from the current iterate and solves the
    /// resulting equality-constrained problem. Accepted only if the result is a
    /// KKT point within tolerance (including multiplier signs).
    /// Active-set guess from the ADMM iterate: a bound is active when the
    /// iterate would cross it after a dual step.
    fn polish_guess(&self) -> Vec<u8> {
        (0..self.n)
            .map(|j| {
                let (l, u) = (self.l_s[j], self.u_s[j]);
                if l == u || self.z_b[j] - l < -self.y_b[j] {
                    1
                } else if u - self.z_b[j] < self.y_b[j] {
                    2
                } else {
                    0
                }
            })
            .collect()
    }

    /// Solves the equality-constrained problem with the bounds in `active`
    /// (0 free, 1 lower, 2 upper) held fixed. Returns scaled `(x, y_eq, y_b)`.
    fn polish_solve(&self, active: &[u8]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let m = self.m;
        let mut x_fixed = vec![0.0; n];
        let mut free = Vec::new();
        let mut pos = vec![usize::MAX; n];
        for j in 0..n {
            match active[j] {
                1 => x_fixed[j] = self.l_s[j],
                2 => x_fixed[j] = self.u_s[j],
                _ => {
                    pos[j] = free.len();
                    free.push(j);
                }
            }
        }
        let nf = free.len();
        let dim = nf + m;

        // regularized and exact reduced KKT, upper triangles
        let mut entries = Vec::new();
        let mut exact = Vec::new();
        for (k, &j) in free.iter().enumerate() {
            for (i, v) in self.p_s.col(j) {
                if pos[i] != usize::MAX && pos[i] <= k {
                    entries.push((pos[i], k, v));
                    exact.push((pos[i], k, v));
                }
            }
            entries.push((k, k, POLISH_DELTA));
        }
        let a_t = self.a_s.transpose(); // n×m
        for r in 0..m {
            for (j, v) in a_t.col(r) {
                if pos[j] != usize::MAX {
                    entries.push((pos[j], nf + r, v));
                    exact.push((pos[j], nf + r, v));
                }
            }
            entries.push((nf + r, nf + r, -POLISH_DELTA));
        }
        let k_reg = CscMatrix::from_triplets(dim, dim, &entries);
        let k_exact = CscMatrix::from_triplets(dim, dim, &exact);
        let factor = LdlFactor::new(&k_reg).ok()?;

        // rhs: [-q_V - P_VF x_F ; b - A_F x_F]
        let px_f = self.p_s.mul_vec(&x_fixed);
        let ax_f = self.a_s.mul_vec(&x_fixed);
        let mut rhs = vec![0.0; dim];
        for (k, &j) in free.iter().enumerate() {
            rhs[k] = -self.q_s[j] - px_f[j];
        }
        for r in 0..m {
            rhs[nf + r] = self.b_s[r] - ax_f[r];
        }
        let mut sol = rhs.clone();
        factor.solve_in_place(&mut sol);
        for _ in 0..POLISH_REFINE {
            let mut res = rhs.clone();
            sym_upper_gemv(&k_exact, -1.0, &sol, &mut res);
            if inf_norm(&res) < 1e-14 * (1.0 + inf_norm(&rhs)) {
                break;
            }
            factor.solve_in_place(&mut res);
            for (s, r) in sol.iter_mut().zip(&res) {
                *s += r;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let mut xs = x_fixed;
        for (k, &j) in free.iter().enumerate() {
            xs[j] = sol[k];
        }
        let ys: Vec<f64> = sol[nf..].to_vec();
        let mut grad = self.p_s.mul_vec(&xs);
        self.a_s.gemv_t(1.0, &ys, &mut grad);
        let yb: Vec<f64> = (0..n)
            .map(|j| if active[j] != 0 { -(grad[j] + self.q_s[j]) } else { 0.0 })
            .collect();
        Some((xs, ys, yb))
    }

    /// Solves the reduced KKT system on the guessed active set and keeps the
    /// result if it meets the tolerances with correctly signed multipliers.
    fn try_polish(&mut self, iterations: usize) -> Option<QpSolution> {
        let n = self.n;
        let active = self.polish_guess();
        let (xs, ys, yb) = self.polish_solve(&active)?;
        let x: Vec<f64> = (0..n).map(|j| self.d[j] * xs[j]).collect();
        let y: Vec<f64> = (0..self.m).map(|r| self.e[r] * ys[r] / self.c).collect();
        let z: Vec<f64> = (0..n).map(|j| yb[j] / (self.c * self.d[j])).collect();
        let (prim, dual) = kkt_residuals(&self.prob, &x, &y, &z);
        let mut sign_violation: f64 = 0.0;
        for j in 0..n {
            if self.l_s[j] == self.u_s[j] {
                continue;
            }
            match active[j] {
                1 => sign_violation = sign_violation.max(z[j]),
                2 => sign_violation = sign_violation.max(-z[j]),
                _ => {}
            }
        }
        let (tol_p, tol_d) = self.tolerances(&x, &y, &z);
        if prim > tol_p || dual.max(sign_violation) > tol_d {
            return None;
        }
        let objective = self.prob.objective(&x);
        self.x = xs;
        self.z_b = (0..n).map(|j| self.x[j].clamp(self.l_s[j], self.u_s[j])).collect();
        self.y_b = yb;
        self.y_eq = ys;
        Some(QpSolution {
            x,
            y,
            z,
            objective,
            status: QpStatus::Solved,
            primal_residual: prim,
            dual_residual: dual.max(sign_violation),
            iterations,
            polished: true,
        })
    }
}

/// Solves a single problem from scratch (or from `warm`).
pub fn solve_qp(
    prob: &CanonicalQp,
    settings: &QpSettings,
    warm: Option<&WarmStart>,
) -> Result<QpSolution, QpError> {
    let mut ws = QpWorkspace::new(prob, settings)?;
    if let Some(w) = warm {
        if w.x.len() != prob.num_vars() {
            return Err(QpError::Dimension("warm start length".into()));
        }
        ws.warm_start(w);
    }
    Ok(ws.solve())
}

/// Unscaled primal residual (max of ‖Ax−b‖∞ and the bound violation) and
/// stationarity residual ‖Px + q + Aᵀy + z‖∞.
pub fn kkt_residuals(prob: &CanonicalQp, x: &[f64], y: &[f64], z: &[f64]) -> (f64, f64) {
    let mut ax = prob.a.mul_vec(x);
    for (v, b) in ax.iter_mut().zip(&prob.b) {
        *v -= b;
    }
    let mut prim = inf_norm(&ax);
    for j in 0..x.len() {
        let viol = (prob.lower[j] - x[j]).max(x[j] - prob.upper[j]).max(0.0);
        prim = prim.max(viol);
    }
    let mut g = prob.p.mul_vec(x);
    prob.a.gemv_t(1.0, y, &mut g);
    let dual = g
        .iter()
        .zip(&prob.q)
        .zip(z)
        .map(|((g, q), z)| (g + q + z).abs())
        .fold(0.0f64, f64::max);
    (prim, dual)
}

/// Magnitudes of the terms in each residual: `max(‖Ax‖∞, ‖b‖∞, ‖x‖∞)` for the
/// primal and `max(‖Px‖∞, ‖Aᵀy + z‖∞, ‖q‖∞)` for the dual.
pub fn kkt_scales(prob: &CanonicalQp, x: &[f64], y: &[f64], z: &[f64]) -> (f64, f64) {
    let ax = prob.a.mul_vec(x);
    let prim = inf_norm(&ax).max(inf_norm(&prob.b)).max(inf_norm(x));
    let px = prob.p.mul_vec(x);
    let mut aty = z.to_vec();
    prob.a.gemv_t(1.0, y, &mut aty);
    let dual = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&prob.q));
    (prim, dual)
}

// y += alpha * K x for K given by its upper triangle
fn sym_upper_gemv(k: &CscMatrix, alpha: f64, x: &[f64], y: &mut [f64]) {
    for j in 0..k.ncols {
        for (i, v) in k.col(j) {
            y[i] += alpha * v * x[j];
            if i != j {
                y[j] += alpha * v * x[i];
            }
        }
    }
}

fn kkt_pattern(p_s: &CscMatrix, a_s: &CscMatrix) -> (CscMatrix, Vec<usize>, Vec<usize>) {
    let n = p_s.ncols;
    let m = a_s.nrows;
    let mut entries = Vec::with_capacity(p_s.nnz() + a_s.nnz() + n + m);
    for (i, j, v) in p_s.triplets() {
        if i < j {
            entries.push((i, j, v));
        }
    }
    for j in 0..n {
        entries.push((j, j, 1.0));
    }
    let a_t = a_s.transpose();
    for r in 0..m {
        for (j, v) in a_t.col(r) {
            entries.push((j, n + r, v));
        }
        entries.push((n + r, n + r, -1.0));
    }
    let kkt = CscMatrix::from_triplets(n + m, n + m, &entries);
    let slot = |c: usize| {
        let range = kkt.colptr[c]..kkt.colptr[c + 1];
        let pos = kkt.rowind[range.clone()].binary_search(&c).expect("diagonal");
        range.start + pos
    };
    let diag_x: Vec<usize> = (0..n).map(slot).collect();
    let diag_eq: Vec<usize> = (0..m).map(|r| slot(n + r)).collect();
    (kkt, diag_x, diag_eq)
}

fn ruiz(prob: &CanonicalQp, iters: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let n = prob.num_vars();
    let m = prob.num_eq();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut q = prob.q.clone();
    let clamp = |norm: f64| {
        if norm < 1e-4 {
            1.0
        } else {
            norm.min(1e4)
        }
    };
    for _ in 0..iters {
        let pn = p.col_inf_norms();
        let an = a.col_inf_norms();
        let rn = a.row_inf_norms();
        let dx: Vec<f64> = (0..n).map(|j| 1.0 / clamp(pn[j].max(an[j])).sqrt()).collect();
        let de: Vec<f64> = (0..m).map(|r| 1.0 / clamp(rn[r]).sqrt()).collect();
        p = p.scaled(&dx, &dx);
        a = a.scaled(&de, &dx);
        for j in 0..n {
            q[j] *= dx[j];
            d[j] *= dx[j];
        }
        for r in 0..m {
            e[r] *= de[r];
        }
    }
    let mut c = 1.0;
    if iters > 0 && n > 0 {
        let pn = p.col_inf_norms();
        let mean = pn.iter().sum::<f64>() / n as f64;
        let scale = clamp(mean.max(inf_norm(&q)));
        c = 1.0 / scale;
    }
    (d, e, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::QpBuilder;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn unconstrained_scalar() {
        // (x-3)^2
        let mut b = QpBuilder::new();
        let x = b.add_var(-INF, INF);
        b.add_square(&[(x, 1.0)], 3.0, 1.0);
        let sol = solve_qp(&b.build(), &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 3.0).abs() < 1e-6);
        assert!(sol.objective.abs() < 1e-9);
    }

    #[test]
    fn active_lower_bound() {
        let mut b = QpBuilder::new();
        let x = b.add_var(2.0, INF);
        b.add_product(x, x, 1.0);
        let sol = solve_qp(&b.build(), &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 2.0).abs() < 1e-6);
        assert!((sol.objective - 4.0).abs() < 1e-5);
        assert!(sol.z[0] < 0.0);
    }

    #[test]
    fn equality_constrained_pair() {
        // (x1-1)^2 + (x2-2)^2 s.t. x1 + x2 = 0; KKT gives (-0.5, 0.5)
        let mut b = QpBuilder::new();
        let x1 = b.add_var(-INF, INF);
        let x2 = b.add_var(-INF, INF);
        b.add_square(&[(x1, 1.0)], 1.0, 1.0);
        b.add_square(&[(x2, 1.0)], 2.0, 1.0);
        b.add_eq(&[(x1, 1.0), (x2, 1.0)], 0.0);
        let sol = solve_qp(&b.build(), &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] + 0.5).abs() < 1e-6);
        assert!((sol.x[1] - 0.5).abs() < 1e-6);
        // multiplier: 2(x1-1) + y = 0 -> y = 3
        assert!((sol.y[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut b = QpBuilder::new();
        let x = b.add_var(1.0, 0.0);
        b.add_product(x, x, 1.0);
        let sol = solve_qp(&b.build(), &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn conflicting_equality_and_box_is_infeasible() {
        let mut b = QpBuilder::new();
        let x1 = b.add_var(0.0, 1.0);
        let x2 = b.add_var(0.0, 1.0);
        b.add_product(x1, x1, 1.0);
        b.add_product(x2, x2, 1.0);
        b.add_eq(&[(x1, 1.0), (x2, 1.0)], 10.0);
        let sol = solve_qp(&b.build(), &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn unbounded_linear_program() {
        let mut b = QpBuilder::new();
        let x = b.add_var(0.0, INF);
        b.add_linear(x, -1.0);
        let sol = solve_qp(&b.build(), &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Unbounded);
    }

    #[test]
    fn indefinite_p_rejected() {
        let mut b = QpBuilder::new();
        let x = b.add_var(-INF, INF);
        b.add_product(x, x, -1.0);
        let err = solve_qp(&b.build(), &QpSettings::default(), None).unwrap_err();
        assert_eq!(err, QpError::NotConvex);
    }

    #[test]
    fn warm_start_from_solution_is_immediate() {
        let mut b = QpBuilder::new();
        let xs = b.add_vars(4, -1.0, 1.0);
        for (k, &x) in xs.iter().enumerate() {
            b.add_square(&[(x, 1.0)], k as f64 - 1.5, 1.0 + k as f64);
        }
        b.add_eq(&[(xs[0], 1.0), (xs[3], 1.0)], 0.3);
        let qp = b.build();
        let s = QpSettings::default();
        let sol = solve_qp(&qp, &s, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        let again = solve_qp(&qp, &s, Some(&sol.warm_start())).unwrap();
        assert_eq!(again.status, QpStatus::Solved);
        assert!(again.iterations <= 5);
    }

    #[test]
    fn empty_problem() {
        let qp = QpBuilder::new().build();
        let sol = solve_qp(&qp, &QpSettings::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.x.is_empty());
    }
}
