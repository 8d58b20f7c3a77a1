//! Exchange ADMM.
//!
//! Each round every agent receives the broadcast `(p̄, u)`, computes
//! `p_i ← prox_i(p_i − p̄ − u)` on its own, and reports `p_i` back. The
//! collector averages the reports in a fixed order and advances the shared
//! scaled price `u ← u + p̄`. Nothing else crosses the agent boundary.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoAdapt {
    None,
    /// Multiply or divide ρ by `factor` whenever one residual exceeds the
    /// other by more than `ratio`.
    ResidualBalancing { factor: f64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeSettings {
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub rho_adapt: RhoAdapt,
    /// Worker threads for the prox fan-out; 1 runs serially.
    pub parallelism: usize,
}

impl ExchangeSettings {
    /// Tolerances of `per_entry·√(N·T)` for `n_agents` schedules of length `horizon`.
    pub fn scaled(n_agents: usize, horizon: usize, per_entry: f64, rho: f64) -> Self {
        let eps = per_entry * ((n_agents * horizon) as f64).sqrt();
        Self {
            eps_pri: eps,
            eps_dual: eps,
            max_iter: 5000,
            rho,
            rho_adapt: RhoAdapt::None,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeState {
    pub k: usize,
    pub schedules: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Scaled price; the unscaled shadow price of balance is `ρ·u`.
    pub u: Vec<f64>,
    pub rho: f64,
    pub residual_history: Vec<(f64, f64)>,
}

impl ExchangeState {
    /// Starting point from given schedules and scaled price.
    pub fn new(schedules: Vec<Vec<f64>>, u: Vec<f64>, rho: f64) -> Self {
        let mean = average(&schedules);
        Self {
            k: 0,
            schedules,
            mean,
            u,
            rho,
            residual_history: Vec::new(),
        }
    }

    pub fn zeros(n_agents: usize, horizon: usize, rho: f64) -> Self {
        Self::new(vec![vec![0.0; horizon]; n_agents], vec![0.0; horizon], rho)
    }

    pub fn n_agents(&self) -> usize {
        self.schedules.len()
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Unscaled price `y = ρ·u`.
    pub fn price(&self) -> Vec<f64> {
        self.u.iter().map(|u| self.rho * u).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExchangeStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct ExchangeOutcome {
    pub state: ExchangeState,
    pub status: ExchangeStatus,
    pub trace: Vec<TraceRow>,
}

impl ExchangeOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// Message sent from the collector to every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub mean: Vec<f64>,
    pub u: Vec<f64>,
}

impl Broadcast {
    /// The prox target `p_i − p̄ − u` an agent derives from its own schedule.
    pub fn target_for(&self, own: &[f64]) -> Vec<f64> {
        own.iter()
            .zip(&self.mean)
            .zip(&self.u)
            .map(|((p, m), u)| p - m - u)
            .collect()
    }
}

/// The synchronization point: averages reported schedules and owns `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Collector {
    mean: Vec<f64>,
    u: Vec<f64>,
}

impl Collector {
    pub fn new(mean: Vec<f64>, u: Vec<f64>) -> Self {
        Self { mean, u }
    }

    pub fn broadcast(&self) -> Broadcast {
        Broadcast {
            mean: self.mean.clone(),
            u: self.u.clone(),
        }
    }

    /// Consumes one round of reports (in agent order) and updates `p̄` and `u`.
    pub fn collect(&mut self, reports: &[Vec<f64>]) {
        self.mean = average(reports);
        for (u, m) in self.u.iter_mut().zip(&self.mean) {
            *u += m;
        }
    }

    pub fn rescale(&mut self, factor: f64) {
        self.u.iter_mut().for_each(|u| *u *= factor);
    }
}

/// Elementwise mean, summed in agent order.
pub fn average(schedules: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = schedules.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; first.len()];
    for s in schedules {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    let n = schedules.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// `(‖p̄^k‖₂, ρ‖(p^k − p̄^k) − (p^{k−1} − p̄^{k−1})‖₂)`, the second norm taken
/// over all agents stacked.
pub fn residuals(state: &ExchangeState, prev: &ExchangeState) -> (f64, f64) {
    let r = norm(&state.mean);
    let mut acc = 0.0;
    for (p, q) in state.schedules.iter().zip(&prev.schedules) {
        for t in 0..p.len() {
            let d = (p[t] - state.mean[t]) - (q[t] - prev.mean[t]);
            acc += d * d;
        }
    }
    (r, state.rho * acc.sqrt())
}

/// Changes ρ while keeping the unscaled price `ρ·u` fixed.
pub fn rescale_rho(state: &ExchangeState, new_rho: f64) -> ExchangeState {
    assert!(new_rho > 0.0, "rho must be positive");
    let mut out = state.clone();
    if new_rho != state.rho {
        let factor = state.rho / new_rho;
        out.u.iter_mut().for_each(|u| *u *= factor);
        out.rho = new_rho;
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn run_exchange<A: Agent>(
    agents: &mut [A],
    init: Option<ExchangeState>,
    settings: &ExchangeSettings,
) -> Result<ExchangeOutcome, AgentError> {
    let n = agents.len();
    let horizon = agents.first().map_or(0, |a| a.horizon());
    assert!(n >= 1, "exchange needs at least one agent");
    for a in agents.iter() {
        assert_eq!(a.horizon(), horizon, "agent {} has a different horizon", a.name());
    }
    let mut state = match init {
        Some(s) => {
            assert_eq!(s.n_agents(), n);
            assert_eq!(s.horizon(), horizon);
            let mut s = rescale_rho(&s, settings.rho);
            s.k = 0;
            s.residual_history.clear();
            s
        }
        None => ExchangeState::zeros(n, horizon, settings.rho),
    };
    state.mean = average(&state.schedules);

    let pool = if settings.parallelism > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(settings.parallelism)
                .build()
                .expect("thread pool"),
        )
    } else {
        None
    };

    let mut collector = Collector::new(state.mean.clone(), state.u.clone());
    let mut trace = Vec::new();
    let mut best: Option<(f64, ExchangeState)> = None;

    for k in 1..=settings.max_iter {
        let bc = collector.broadcast();
        let rho = state.rho;
        let targets: Vec<Vec<f64>> = state.schedules.iter().map(|p| bc.target_for(p)).collect();
        let results: Vec<Result<Vec<f64>, AgentError>> = match &pool {
            Some(pool) => pool.install(|| {
                agents
                    .par_iter_mut()
                    .zip(targets.par_iter())
                    .map(|(a, v)| a.prox(v, rho))
                    .collect()
            }),
            None => agents.iter_mut().zip(&targets).map(|(a, v)| a.prox(v, rho)).collect(),
        };
        let schedules = results.into_iter().collect::<Result<Vec<_>, _>>()?;

        collector.collect(&schedules);
        let prev = std::mem::replace(
            &mut state,
            ExchangeState {
                k,
                schedules,
                mean: collector.mean.clone(),
                u: collector.u.clone(),
                rho,
                residual_history: Vec::new(),
            },
        );
        let (r, s) = residuals(&state, &prev);
        state.residual_history = prev.residual_history;
        state.residual_history.push((r, s));
        let objective: f64 = agents.iter().zip(&state.schedules).map(|(a, p)| a.cost(p)).sum();
        trace.push(TraceRow {
            k,
            r_norm: r,
            s_norm: s,
            objective,
        });

        if r <= settings.eps_pri && s <= settings.eps_dual {
            return Ok(ExchangeOutcome {
                state,
                status: ExchangeStatus::Converged,
                trace,
            });
        }
        let merit = (r / settings.eps_pri).max(s / settings.eps_dual);
        if best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, state.clone()));
        }

        if let RhoAdapt::ResidualBalancing { factor, ratio } = settings.rho_adapt {
            let new_rho = if r > ratio * s {
                rho * factor
            } else if s > ratio * r {
                rho / factor
            } else {
                rho
            };
            if new_rho != rho {
                state = rescale_rho(&state, new_rho);
                collector.rescale(rho / new_rho);
            }
        }
    }
    let mut state = best.map(|(_, s)| s).unwrap_or(state);
    state.residual_history = trace.iter().map(|t| (t.r_norm, t.s_norm)).collect();
    Ok(ExchangeOutcome {
        state,
        status: ExchangeStatus::MaxIterations,
        trace,
    })
}

/// Writes an iteration trace as CSV with header `k,r_norm,s_norm,objective`.
pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Searches `[lo, hi]` on a log scale for the ρ minimizing `cost(ρ)`
/// (typically an iteration count), assuming the cost is unimodal in log ρ.
pub fn search_rho(lo: f64, hi: f64, rounds: usize, mut cost: impl FnMut(f64) -> f64) -> f64 {
    assert!(0.0 < lo && lo < hi);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..rounds {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if cost(m1.exp()) <= cost(m2.exp()) {
            b = m2;
        } else {
            a = m1;
        }
    }
    (0.5 * (a + b)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::QuadraticAgent;

    fn quad(name: &str, a: f64) -> QuadraticAgent {
        QuadraticAgent::new(name, vec![a], vec![1.0])
    }

    fn tight(rho: f64) -> ExchangeSettings {
        ExchangeSettings {
            eps_pri: 1e-8,
            eps_dual: 1e-8,
            max_iter: 5000,
            rho,
            rho_adapt: RhoAdapt::None,
            parallelism: 1,
        }
    }

    #[test]
    fn two_agent_balance() {
        let mut agents = vec![quad("a", 4.0), quad("b", -2.0)];
        let out = run_exchange(&mut agents, None, &tight(1.0)).unwrap();
        assert_eq!(out.status, ExchangeStatus::Converged);
        let p = &out.state.schedules;
        assert!((p[0][0] - 3.0).abs() < 1e-6 && (p[1][0] + 3.0).abs() < 1e-6);
        // shadow price equals the KKT multiplier 2(a − p₁) = 2
        assert!((out.state.price()[0] - 2.0).abs() < 1e-5);
    }

    #[test]
    fn balanced_targets_are_immediate() {
        let mut agents = vec![quad("a", 1.0), quad("b", 2.0), quad("c", -3.0)];
        let out = run_exchange(&mut agents, None, &tight(1.0)).unwrap();
        assert_eq!(out.status, ExchangeStatus::Converged);
        for (p, t) in out.state.schedules.iter().zip([1.0, 2.0, -3.0]) {
            assert!((p[0] - t).abs() < 1e-7);
        }
        assert!(out.iterations() <= 60);
    }

    #[test]
    fn residual_examples() {
        let s = ExchangeState::new(vec![vec![1.0], vec![1.0]], vec![0.0], 1.0);
        assert_eq!(residuals(&s, &s).0, 1.0);
        let z = ExchangeState::new(vec![vec![1.0], vec![-1.0]], vec![0.0], 1.0);
        assert_eq!(residuals(&z, &z), (0.0, 0.0));
        let a = ExchangeState::new(vec![vec![0.0], vec![0.0]], vec![0.0], 2.0);
        let b = ExchangeState::new(vec![vec![0.5], vec![-0.5]], vec![0.0], 2.0);
        assert!((residuals(&b, &a).1 - 2.0 * 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rescale_examples() {
        let s = ExchangeState::new(vec![vec![0.0]], vec![8.0], 1.0);
        assert_eq!(rescale_rho(&s, 4.0).u, vec![2.0]);
        assert_eq!(rescale_rho(&s, 0.5).u, vec![16.0]);
        assert_eq!(rescale_rho(&s, 1.0), s);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(
            &[TraceRow {
                k: 1,
                r_norm: 0.5,
                s_norm: 0.25,
                objective: 3.0,
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,r_norm,s_norm,objective\n1,0.5,0.25,3.0"));
    }

    #[test]
    fn rho_search_finds_minimum() {
        let best = search_rho(1e-3, 1e3, 40, |r| (r.ln() - 2.0f64.ln()).powi(2));
        assert!((best - 2.0).abs() < 1e-3);
    }
}
