//! Runs a scenario under every mode and reports the metrics side by side.

use rayon::prelude::*;
use serde::Serialize;

use crate::metrics::{compute_metrics, MetricsReport};
use crate::mpc::{run, Mode, SimulationResult};
use crate::scenario::PreparedScenario;
use crate::CoreError;

/// `|a − b| / |b|`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    /// One row per mode, in the order admm, centralized, prescient.
    pub rows: Vec<MetricsReport>,
    /// Total-cost gap of the exchange against the centralized solve.
    pub gap_admm_centralized: f64,
    /// Total-cost gap of forecasting against perfect knowledge.
    pub gap_centralized_prescient: f64,
}

impl Comparison {
    pub fn from_reports(rows: Vec<MetricsReport>) -> Self {
        let cost = |m: Mode| rows.iter().find(|r| r.mode == m).map_or(f64::NAN, |r| r.total_cost);
        Self {
            gap_admm_centralized: relative_gap(cost(Mode::Admm), cost(Mode::Centralized)),
            gap_centralized_prescient: relative_gap(cost(Mode::Centralized), cost(Mode::Prescient)),
            rows,
        }
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<12} {:>14} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
            "mode", "external $", "smoothing", "pv curt kWh", "load curt kWh", "ev short kWh", "total"
        );
        for r in &self.rows {
            s += &format!(
                "{:<12} {:>14.2} {:>14.3} {:>14.2} {:>14.2} {:>14.3} {:>14.2}\n",
                r.mode.as_str(),
                r.external_cost,
                r.smoothing_cost,
                r.pv_curtailed,
                r.load_curtailed,
                r.ev_shortfall,
                r.total_cost
            );
        }
        s += &format!(
            "gap admm/centralized: {:.3}%   gap centralized/prescient: {:.3}%\n",
            100.0 * self.gap_admm_centralized,
            100.0 * self.gap_centralized_prescient
        );
        s
    }
}

/// Runs all three modes on the same prepared data.
pub fn compare(scenario: &PreparedScenario) -> Result<(Comparison, Vec<SimulationResult>), CoreError> {
    let results: Vec<SimulationResult> = Mode::ALL
        .par_iter()
        .map(|&m| run(scenario, m))
        .collect::<Result<_, _>>()?;
    let rows = results.iter().map(|r| compute_metrics(r, scenario)).collect();
    Ok((Comparison::from_reports(rows), results))
}
