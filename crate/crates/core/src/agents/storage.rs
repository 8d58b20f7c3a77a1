use dermpc_qp::{DiffOperator, QpBuilder, QpSettings};
use serde::{Deserialize, Serialize};

use super::{check_len, Agent, AgentError, Combo, QpProx};

/// Battery model shared by the stationary battery and every vehicle.
///
/// Power is split into charging `p_c ≥ 0` and discharging `p_d ≥ 0` with
/// `p = p_c − p_d` and
///
/// ```text
/// q(t+1) = η_q·q(t) + η_c·Δt·p_c(t) − (Δt/η_d)·p_d(t)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageParams {
    /// kW.
    pub c_max: f64,
    /// kW.
    pub d_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Retention per step.
    pub eta_q: f64,
    pub q_min_frac: f64,
    pub q_max_frac: f64,
    /// kWh.
    pub q_cap: f64,
    pub alpha_cyc: f64,
    /// $/kWh on charged plus discharged energy. Keeps the charge/discharge
    /// split unique.
    #[serde(default = "default_throughput_cost")]
    pub throughput_cost: f64,
}

fn default_throughput_cost() -> f64 {
    1e-4
}

impl StorageParams {
    pub fn q_min(&self) -> f64 {
        self.q_min_frac * self.q_cap
    }

    pub fn q_max(&self) -> f64 {
        self.q_max_frac * self.q_cap
    }

    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(format!("{name} must lie in (0, 1], got {v}"))
            }
        };
        unit("eta_c", self.eta_c)?;
        unit("eta_d", self.eta_d)?;
        unit("eta_q", self.eta_q)?;
        if !(self.c_max >= 0.0 && self.d_max >= 0.0) {
            return Err("c_max and d_max must be nonnegative".into());
        }
        if !(self.q_cap > 0.0) {
            return Err(format!("q_cap must be positive, got {}", self.q_cap));
        }
        if !(0.0 <= self.q_min_frac && self.q_min_frac <= self.q_max_frac && self.q_max_frac <= 1.0) {
            return Err(format!(
                "need 0 <= q_min_frac <= q_max_frac <= 1, got {} and {}",
                self.q_min_frac, self.q_max_frac
            ));
        }
        if !(self.alpha_cyc >= 0.0 && self.throughput_cost >= 0.0) {
            return Err("alpha_cyc and throughput_cost must be nonnegative".into());
        }
        Ok(())
    }

    /// Charge after one step at power `p`.
    pub fn next_charge(&self, q: f64, p: f64, dt: f64) -> f64 {
        if p >= 0.0 {
            self.eta_q * q + self.eta_c * dt * p
        } else {
            self.eta_q * q + dt / self.eta_d * p
        }
    }

    /// Power that takes the charge from `q` to `target` in one step, limited
    /// to the rate bounds.
    fn power_to_reach(&self, q: f64, target: f64, dt: f64) -> f64 {
        let idle = self.eta_q * q;
        if target >= idle {
            ((target - idle) / (self.eta_c * dt)).min(self.c_max)
        } else {
            (-(idle - target) * self.eta_d / dt).max(-self.d_max)
        }
    }

    /// Clamps a requested power to the rate limits and to what keeps the
    /// charge inside its bounds over one step, charging or discharging if
    /// self-discharge or an out-of-range start would otherwise leave them.
    /// Returns the applied power and the resulting charge.
    pub fn execute(&self, q: f64, p: f64, dt: f64) -> (f64, f64) {
        let p_lo = self.power_to_reach(q, self.q_min(), dt);
        let p_hi = self.power_to_reach(q, self.q_max(), dt);
        let p = p.clamp(-self.d_max, self.c_max).clamp(p_lo, p_hi);
        let mut next = self.next_charge(q, p, dt);
        // land exactly on a bound the clamp aimed at
        if p == p_lo && p_lo > -self.d_max && p_lo < self.c_max {
            next = self.q_min();
        } else if p == p_hi && p_hi > -self.d_max && p_hi < self.c_max {
            next = self.q_max();
        }
        (p, next)
    }

    /// Charge bounds over a window starting at `q_init`: `[q_min, q_max]`,
    /// widened only where a start outside them cannot get back in time.
    fn charge_bounds(&self, q_init: f64, steps: usize, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lower = Vec::with_capacity(steps + 1);
        let mut upper = Vec::with_capacity(steps + 1);
        let (mut fastest_up, mut fastest_down) = (q_init, q_init);
        for _ in 0..=steps {
            lower.push(self.q_min().min(fastest_up));
            upper.push(self.q_max().max(fastest_down));
            fastest_up = self.eta_q * fastest_up + self.eta_c * dt * self.c_max;
            fastest_down = self.eta_q * fastest_down - dt / self.eta_d * self.d_max;
        }
        (lower, upper)
    }
}

/// End-of-window requirement on the charge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Terminal {
    Free,
    /// `q(end) = value`.
    Final(f64),
    /// `q(end) ≥ value` at departure.
    Departure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reachability {
    pub feasible: bool,
    pub max_attainable: f64,
    pub min_attainable: f64,
}

/// A battery available over `[window.0, window.1)` of the horizon. Outside
/// the window its power is pinned to zero.
#[derive(Debug, Clone)]
pub struct StorageAgent {
    name: String,
    params: StorageParams,
    dt: f64,
    horizon: usize,
    window: (usize, usize),
    q_init: f64,
    terminal: Terminal,
    prev: Vec<f64>,
    alpha_prev: f64,
    cache: QpProx,
}

impl StorageAgent {
    /// Always available over `horizon` steps of `dt` hours, starting at `q_init`.
    pub fn new(name: impl Into<String>, params: StorageParams, dt: f64, horizon: usize, q_init: f64) -> Self {
        Self {
            name: name.into(),
            params,
            dt,
            horizon,
            window: (0, horizon),
            q_init,
            terminal: Terminal::Free,
            prev: Vec::new(),
            alpha_prev: 0.0,
            cache: QpProx::default(),
        }
    }

    /// Restricts availability to `[start, end)`; `q_init` then refers to `start`.
    pub fn with_window(mut self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.horizon, "window must lie inside the horizon");
        self.window = (start, end);
        self.cache.invalidate();
        self
    }

    pub fn with_terminal(mut self, terminal: Terminal) -> Self {
        self.terminal = terminal;
        self.cache.invalidate();
        self
    }

    pub fn with_prev(mut self, prev: Vec<f64>, alpha_prev: f64) -> Self {
        assert!(prev.len() <= self.horizon);
        self.prev = prev;
        self.alpha_prev = alpha_prev;
        self.cache.invalidate();
        self
    }

    pub fn with_settings(mut self, settings: QpSettings) -> Self {
        self.cache = QpProx::new(settings);
        self
    }

    pub fn params(&self) -> &StorageParams {
        &self.params
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn q_init(&self) -> f64 {
        self.q_init
    }

    pub fn terminal(&self) -> Terminal {
        self.terminal
    }

    /// Charge reachable at the end of the window by charging (or
    /// discharging) at the maximum admissible rate throughout.
    pub fn reachability_check(&self) -> Reachability {
        let p = &self.params;
        let steps = self.window.1 - self.window.0;
        let (lower, upper) = p.charge_bounds(self.q_init, steps, self.dt);
        let (mut hi, mut lo) = (self.q_init, self.q_init);
        for k in 1..=steps {
            hi = (p.eta_q * hi + p.eta_c * self.dt * p.c_max).min(upper[k]);
            lo = (p.eta_q * lo - self.dt / p.eta_d * p.d_max).max(lower[k]);
        }
        let feasible = match self.terminal {
            Terminal::Free => true,
            Terminal::Final(q) => lo <= q && q <= hi,
            Terminal::Departure(q) => q <= hi,
        };
        Reachability {
            feasible,
            max_attainable: hi,
            min_attainable: lo,
        }
    }

    /// The terminal condition actually imposed: a departure request above
    /// the reachable charge is lowered to it. An unreachable final charge is
    /// kept and makes the problem infeasible.
    pub fn enforced_terminal(&self) -> Terminal {
        match self.terminal {
            Terminal::Departure(q) => {
                let r = self.reachability_check();
                let margin = 1e-9 * self.params.q_cap;
                if q > r.max_attainable - margin {
                    Terminal::Departure((r.max_attainable - margin).max(r.min_attainable))
                } else {
                    Terminal::Departure(q)
                }
            }
            t => t,
        }
    }

    /// How much the departure requirement had to be lowered to stay reachable.
    pub fn relaxation(&self) -> f64 {
        match (self.terminal, self.enforced_terminal()) {
            (Terminal::Departure(want), Terminal::Departure(got)) => (want - got).max(0.0),
            _ => 0.0,
        }
    }

    /// Proximal step together with the planned charge trajectory
    /// (length horizon + 1; held constant outside the window).
    pub fn prox_with_charge(&mut self, v: &[f64], rho: f64) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        let p = self.prox(v, rho)?;
        let q = self.charge_trajectory().expect("solved above");
        Ok((p, q))
    }

    /// Charge trajectory of the most recent prox solution.
    pub fn charge_trajectory(&self) -> Option<Vec<f64>> {
        let x = &self.cache.last_solution()?.x;
        let n = self.window.1 - self.window.0;
        let q0 = 2 * n;
        let mut out = Vec::with_capacity(self.horizon + 1);
        for k in 0..=self.horizon {
            let idx = k.clamp(self.window.0, self.window.1) - self.window.0;
            out.push(x[q0 + idx]);
        }
        Some(out)
    }
}

impl Agent for StorageAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        let p = &self.params;
        let (a, end) = self.window;
        let n = end - a;
        let pc: Vec<usize> = (0..n).map(|_| b.add_var(0.0, p.c_max)).collect();
        let pd: Vec<usize> = (0..n).map(|_| b.add_var(0.0, p.d_max)).collect();
        let (mut lower, upper) = p.charge_bounds(self.q_init, n, self.dt);
        lower[0] = self.q_init;
        let mut upper = upper;
        upper[0] = self.q_init;
        match self.enforced_terminal() {
            Terminal::Free => {}
            Terminal::Final(q) if n > 0 => {
                lower[n] = q;
                upper[n] = q;
            }
            Terminal::Departure(q) if n > 0 => lower[n] = lower[n].max(q),
            _ => {}
        }
        let q: Vec<usize> = (0..=n).map(|k| b.add_var(lower[k], upper[k])).collect();
        for k in 0..n {
            b.add_eq(
                &[
                    (q[k + 1], 1.0),
                    (q[k], -p.eta_q),
                    (pc[k], -p.eta_c * self.dt),
                    (pd[k], self.dt / p.eta_d),
                ],
                0.0,
            );
            b.add_linear(pc[k], p.throughput_cost * self.dt);
            b.add_linear(pd[k], p.throughput_cost * self.dt);
        }

        let combos: Vec<Combo> = (0..self.horizon)
            .map(|t| {
                if (a..end).contains(&t) {
                    vec![(pc[t - a], 1.0), (pd[t - a], -1.0)]
                } else {
                    Vec::new()
                }
            })
            .collect();

        if p.alpha_cyc > 0.0 {
            let mut op = DiffOperator::first_difference_of(&combos, None);
            op.rows.retain(|r| !r.terms.is_empty());
            let weights = vec![p.alpha_cyc; op.len()];
            b.add_l1(&weights, &op);
        }
        for (combo, &target) in combos.iter().zip(&self.prev) {
            if combo.is_empty() {
                b.add_constant(self.alpha_prev * target * target);
            } else {
                b.add_square(combo, target, self.alpha_prev);
            }
        }
        combos
    }

    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        check_len(&self.name, self.horizon, v)?;
        let mut cache = std::mem::take(&mut self.cache);
        let out = cache.prox(&*self, v, rho);
        self.cache = cache;
        out
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let cyc: f64 = p.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let prev: f64 = p.iter().zip(&self.prev).map(|(p, q)| (p - q).powi(2)).sum();
        let throughput: f64 = p.iter().map(|p| p.abs()).sum();
        self.params.alpha_cyc * cyc + self.alpha_prev * prev + self.params.throughput_cost * self.dt * throughput
    }
}
