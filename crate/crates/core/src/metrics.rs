//! Cost metrics of a completed run, all evaluated on executed schedules
//! against the realized PV and load.

use serde::{Deserialize, Serialize};

use crate::mpc::{Mode, SimulationResult};
use crate::scenario::PreparedScenario;
use crate::types::smoothing_cost;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub steps: usize,
    /// $, `Σ c·p_grid·Δt` with imports positive.
    pub external_cost: f64,
    /// Weighted range, total variation and curvature of the grid flow.
    pub smoothing_cost: f64,
    /// kWh of available generation not used.
    pub pv_curtailed: f64,
    /// kWh of demand not served.
    pub load_curtailed: f64,
    /// kWh missing at departures, summed over vehicle-days.
    pub ev_shortfall: f64,
    /// Sum of every device objective on the executed schedules: energy and
    /// smoothing cost, curtailment penalties, cycling and throughput costs.
    pub total_cost: f64,
}

fn total_variation(p: &[f64]) -> f64 {
    p.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

pub fn compute_metrics(result: &SimulationResult, scenario: &PreparedScenario) -> MetricsReport {
    let cfg = &scenario.config;
    let w = &cfg.weights;
    let n = result.steps;
    let dt = cfg.grid.dt_hours();
    let price = &scenario.price[..n];
    let actual_load = scenario.actual_load(0, n);
    let actual_pv = scenario.actual_pv(0, n);

    let external_cost: f64 = price.iter().zip(&result.grid).map(|(c, p)| c * p * dt).sum();
    let smooth_w = w.smoothing();
    let smoothing = if n >= 3 {
        smoothing_cost(&result.grid, &smooth_w).expect("length checked")
    } else if n == 0 {
        0.0
    } else {
        let g = &result.grid;
        let range = g.iter().copied().fold(f64::NEG_INFINITY, f64::max) - g.iter().copied().fold(f64::INFINITY, f64::min);
        smooth_w.alpha_range * range + smooth_w.alpha_diff * total_variation(g)
    };
    let load_gap: Vec<f64> = actual_load.iter().zip(&result.load).map(|(a, s)| (a - s).max(0.0)).collect();
    let pv_gap: Vec<f64> = actual_pv.iter().zip(&result.pv).map(|(a, r)| (r - a).max(0.0)).collect();
    let load_curtailed: f64 = load_gap.iter().sum::<f64>() * dt;
    let pv_curtailed: f64 = pv_gap.iter().sum::<f64>() * dt;
    let ev_shortfall: f64 = result.departures.iter().map(|d| (d.required - d.achieved).max(0.0)).sum();

    let mut storage = 0.0;
    if let Some(p) = scenario.bes_params() {
        storage += p.alpha_cyc * total_variation(&result.bes)
            + p.throughput_cost * dt * result.bes.iter().map(|x| x.abs()).sum::<f64>();
    }
    for (v, sched) in scenario.fleet.vehicles.iter().zip(&result.ev) {
        storage += v.params.alpha_cyc * total_variation(sched)
            + v.params.throughput_cost * dt * sched.iter().map(|x| x.abs()).sum::<f64>();
    }
    let total_cost = external_cost
        + smoothing
        + w.alpha_load * load_gap.iter().map(|x| x * x).sum::<f64>()
        + w.alpha_pv * pv_gap.iter().map(|x| x * x).sum::<f64>()
        + storage;

    MetricsReport {
        mode: result.mode,
        steps: n,
        external_cost,
        smoothing_cost: smoothing,
        pv_curtailed,
        load_curtailed,
        ev_shortfall,
        total_cost,
    }
}
