//! Centralized solution of `minimize Σ f_i(p_i) s.t. Σ p_i = 0` as one QP
//! built from the agents' own encodings.

use dermpc_qp::{solve_qp, QpBuilder, QpSettings, QpSolution, QpStatus};

use crate::agents::{eval_combo, Agent};
use crate::mpc::{Mode, SimulationResult};
use crate::scenario::PreparedScenario;
use crate::CoreError;

#[derive(Debug, Clone)]
pub struct CentralSolution {
    pub schedules: Vec<Vec<f64>>,
    /// `Σ f_i(p_i)` evaluated by the agents.
    pub objective: f64,
    pub status: QpStatus,
    pub solution: QpSolution,
}

/// Solver settings used for reference solves.
pub fn reference_settings() -> QpSettings {
    QpSettings {
        eps_abs: 1e-8,
        eps_rel: 1e-8,
        max_iter: 50_000,
        ..QpSettings::default()
    }
}

pub fn solve_centralized<A: Agent>(agents: &[A], settings: &QpSettings) -> Result<CentralSolution, CoreError> {
    let horizon = agents.first().map_or(0, |a| a.horizon());
    let mut b = QpBuilder::new();
    let combos: Vec<_> = agents
        .iter()
        .map(|a| {
            assert_eq!(a.horizon(), horizon, "agent {} has a different horizon", a.name());
            a.encode(&mut b)
        })
        .collect();
    for t in 0..horizon {
        let row: Vec<(usize, f64)> = combos.iter().flat_map(|c| c[t].iter().copied()).collect();
        b.add_eq(&row, 0.0);
    }
    let qp = b.build();
    let sol = solve_qp(&qp, settings, None)?;
    match sol.status {
        QpStatus::Solved => {}
        QpStatus::MaxIterations => log::warn!(
            "centralized solve hit the iteration cap (primal {:.2e}, dual {:.2e})",
            sol.primal_residual,
            sol.dual_residual
        ),
        QpStatus::Infeasible | QpStatus::Unbounded => return Err(CoreError::Infeasible(diagnose(agents, settings))),
    }
    let schedules: Vec<Vec<f64>> = combos
        .iter()
        .map(|c| c.iter().map(|combo| eval_combo(combo, &sol.x)).collect())
        .collect();
    let objective = agents.iter().zip(&schedules).map(|(a, p)| a.cost(p)).sum();
    Ok(CentralSolution {
        schedules,
        objective,
        status: sol.status,
        solution: sol,
    })
}

// Names the agents whose own constraints are infeasible; otherwise blames the
// balance rows.
fn diagnose<A: Agent>(agents: &[A], settings: &QpSettings) -> String {
    let bad: Vec<&str> = agents
        .iter()
        .filter(|a| {
            let mut b = QpBuilder::new();
            a.encode(&mut b);
            matches!(
                solve_qp(&b.build(), settings, None).map(|s| s.status),
                Ok(QpStatus::Infeasible) | Err(_)
            )
        })
        .map(|a| a.name())
        .collect();
    if bad.is_empty() {
        "power balance cannot be met within the agents' limits".into()
    } else {
        format!("constraints of {} cannot be met", bad.join(", "))
    }
}

/// MPC with the centralized solver in place of the exchange; `prescient`
/// replaces every forecast by the realized data.
pub fn run_centralized_mpc(scenario: &PreparedScenario, prescient: bool) -> Result<SimulationResult, CoreError> {
    let mode = if prescient { Mode::Prescient } else { Mode::Centralized };
    crate::mpc::run(scenario, mode)
}
