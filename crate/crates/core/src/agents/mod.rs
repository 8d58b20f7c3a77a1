//! The DER controllers. Each agent owns a local objective `f_i` over its
//! power schedule and answers proximal queries
//! `argmin f_i(p) + (ρ/2)‖p − v‖²` for the exchange coordinator.
//!
//! Agents also expose their objective as canonical QP data through
//! [`Agent::encode`], which the centralized reference stacks into a single
//! problem. The iterative and the centralized paths therefore share one
//! definition of every `f_i`.

mod grid;
mod load;
mod quadratic;
mod storage;

pub use grid::GridAgent;
pub use load::{LoadAgent, PvAgent};
pub use quadratic::QuadraticAgent;
pub use storage::{Reachability, StorageAgent, StorageParams, Terminal};

use dermpc_qp::{QpBuilder, QpError, QpSettings, QpSolution, QpStatus, QpWorkspace, WarmStart};

/// Linear combination of QP variables giving one entry of an exchange
/// schedule. An empty combination is a step pinned to zero.
pub type Combo = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("agent {agent}: subproblem infeasible ({detail})")]
    Infeasible { agent: String, detail: String },
    #[error("agent {agent}: {source}")]
    Solver { agent: String, source: QpError },
    #[error("agent {agent}: expected a schedule of length {expected}, got {got}")]
    Length { agent: String, expected: usize, got: usize },
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    /// Number of steps in the schedule.
    fn horizon(&self) -> usize;

    /// Appends the agent's variables, constraints and cost to `b` and returns
    /// one combination per step that evaluates to the exchange schedule.
    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo>;

    /// `argmin_p f(p) + (ρ/2)‖p − v‖²`.
    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError>;

    /// `f(p)` for a schedule that satisfies the agent's constraints.
    fn cost(&self, p: &[f64]) -> f64;
}

impl<A: Agent + ?Sized> Agent for Box<A> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        (**self).encode(b)
    }
    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        (**self).prox(v, rho)
    }
    fn cost(&self, p: &[f64]) -> f64 {
        (**self).cost(p)
    }
}

pub(crate) fn check_len(agent: &str, expected: usize, v: &[f64]) -> Result<(), AgentError> {
    if v.len() != expected {
        return Err(AgentError::Length {
            agent: agent.to_string(),
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn eval_combo(combo: &Combo, x: &[f64]) -> f64 {
    combo.iter().map(|&(j, c)| c * x[j]).sum()
}

/// Cached QP for repeated proximal queries on one agent. The quadratic part
/// `P + ρMᵀM` is factored once; each query only changes the linear term.
#[derive(Debug, Clone)]
pub struct QpProx {
    settings: QpSettings,
    state: Option<ProxState>,
}

#[derive(Debug, Clone)]
struct ProxState {
    rho: f64,
    ws: QpWorkspace,
    combos: Vec<Combo>,
    q_base: Vec<f64>,
    last: Option<QpSolution>,
}

impl Default for QpProx {
    fn default() -> Self {
        Self::new(QpSettings::default())
    }
}

impl QpProx {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, state: None }
    }

    /// Drops the cached factorization (call after the agent's data changed).
    pub fn invalidate(&mut self) {
        self.state = None;
    }

    pub fn last_solution(&self) -> Option<&QpSolution> {
        self.state.as_ref().and_then(|s| s.last.as_ref())
    }

    /// Solves the proximal problem of `agent` at `v`.
    pub fn prox<A: Agent + ?Sized>(&mut self, agent: &A, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        check_len(agent.name(), agent.horizon(), v)?;
        let stale = match &self.state {
            Some(s) => s.rho != rho,
            None => true,
        };
        if stale {
            let warm = self.state.as_ref().and_then(|s| s.last.as_ref()).map(|s| s.warm_start());
            self.state = Some(self.build(agent, rho, warm)?);
        }
        let st = self.state.as_mut().expect("state built above");
        let mut q = st.q_base.clone();
        for (combo, &vt) in st.combos.iter().zip(v) {
            for &(j, c) in combo {
                q[j] -= rho * c * vt;
            }
        }
        st.ws.update_linear_cost(&q);
        let sol = st.ws.solve();
        match sol.status {
            QpStatus::Solved => {}
            QpStatus::MaxIterations => log::warn!(
                "agent {}: prox stopped at the iteration cap (primal {:.2e}, dual {:.2e})",
                agent.name(),
                sol.primal_residual,
                sol.dual_residual
            ),
            QpStatus::Infeasible | QpStatus::Unbounded => {
                return Err(AgentError::Infeasible {
                    agent: agent.name().to_string(),
                    detail: format!("{:?}", sol.status),
                })
            }
        }
        let p = st.combos.iter().map(|c| eval_combo(c, &sol.x)).collect();
        st.last = Some(sol);
        Ok(p)
    }

    fn build<A: Agent + ?Sized>(&self, agent: &A, rho: f64, warm: Option<WarmStart>) -> Result<ProxState, AgentError> {
        let mut b = QpBuilder::new();
        let combos = agent.encode(&mut b);
        for combo in &combos {
            if !combo.is_empty() {
                b.add_square(combo, 0.0, 0.5 * rho);
            }
        }
        let qp = b.build();
        let q_base = qp.q.clone();
        let mut ws = QpWorkspace::new(&qp, &self.settings).map_err(|source| AgentError::Solver {
            agent: agent.name().to_string(),
            source,
        })?;
        if let Some(w) = warm.filter(|w| w.x.len() == qp.num_vars()) {
            ws.warm_start(&w);
        }
        Ok(ProxState {
            rho,
            ws,
            combos,
            q_base,
            last: None,
        })
    }
}

/// Proximal step computed from the agent's QP encoding with a fresh solver.
/// Closed-form agents use this as an independent check of their formulas.
pub fn prox_via_qp<A: Agent + ?Sized>(agent: &A, v: &[f64], rho: f64, settings: &QpSettings) -> Result<Vec<f64>, AgentError> {
    QpProx::new(settings.clone()).prox(agent, v, rho)
}
