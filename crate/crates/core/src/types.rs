//! Time grid, sign conventions and the shared penalty weights.
//!
//! Every power schedule in this crate is in kW with consumption positive and
//! generation negative. Charge states are in kWh.

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::CoreError;

/// kW per step. Consumption positive, generation negative.
pub type PowerSchedule = Vec<f64>;
/// kWh at step boundaries; one entry longer than the matching power schedule.
pub type ChargeTrajectory = Vec<f64>;
/// $/kWh per step.
pub type PriceSchedule = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(default = "default_step_minutes")]
    pub step_minutes: u32,
    /// Steps in one MPC lookahead.
    #[serde(default = "default_horizon")]
    pub horizon_steps: usize,
    /// Number of simulated (executed) steps.
    #[serde(default = "default_sim_steps")]
    pub sim_steps: usize,
    /// Wall-clock time of simulated step 0.
    #[serde(default = "default_origin")]
    pub origin: NaiveDateTime,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            step_minutes: default_step_minutes(),
            horizon_steps: default_horizon(),
            sim_steps: default_sim_steps(),
            origin: default_origin(),
        }
    }
}

fn default_sim_steps() -> usize {
    288
}

fn default_origin() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2024, 6, 3)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

fn default_step_minutes() -> u32 {
    15
}

fn default_horizon() -> usize {
    96
}

impl TimeGrid {
    pub fn new(step_minutes: u32, horizon_steps: usize, sim_steps: usize, origin: NaiveDateTime) -> Result<Self, CoreError> {
        let g = Self {
            step_minutes,
            horizon_steps,
            sim_steps,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.step_minutes == 0 {
            return Err(CoreError::Invalid("step_minutes must be positive".into()));
        }
        if (24 * 60) % self.step_minutes != 0 {
            return Err(CoreError::Invalid(format!(
                "step_minutes = {} does not divide a day",
                self.step_minutes
            )));
        }
        if self.horizon_steps == 0 {
            return Err(CoreError::Invalid("horizon_steps must be positive".into()));
        }
        if self.sim_steps == 0 {
            return Err(CoreError::Invalid("sim_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn dt_hours(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    /// Steps per day.
    pub fn period_steps(&self) -> usize {
        (24 * 60 / self.step_minutes) as usize
    }

    /// Wall-clock time of simulated step `k` (negative `k` reaches into history).
    pub fn timestamp(&self, k: i64) -> NaiveDateTime {
        self.origin + chrono::Duration::minutes(k * self.step_minutes as i64)
    }

    /// Horizon length at simulated step `t`, shrinking near the end of the run.
    pub fn active_horizon(&self, t: usize) -> usize {
        self.horizon_steps.min(self.sim_steps.saturating_sub(t))
    }
}

pub fn power_to_energy(p_kw: f64, grid: &TimeGrid) -> f64 {
    p_kw * grid.dt_hours()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SmoothingWeights {
    pub alpha_range: f64,
    pub alpha_diff: f64,
    pub alpha_curv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyWeights {
    pub alpha_load: f64,
    pub alpha_pv: f64,
    pub alpha_cyc_bes: f64,
    /// Default for every vehicle; the fleet may override per vehicle.
    pub alpha_cyc_ev: f64,
    pub alpha_range: f64,
    pub alpha_diff: f64,
    pub alpha_curv: f64,
    pub alpha_prev: f64,
    /// Fraction of the desired departure charge that must be met.
    pub alpha_des: f64,
    pub rho: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self {
            alpha_load: 0.002,
            alpha_pv: 1e-4,
            alpha_cyc_bes: 0.001,
            alpha_cyc_ev: 0.001,
            alpha_range: 0.05,
            alpha_diff: 0.002,
            alpha_curv: 1e-5,
            alpha_prev: 1e-5,
            alpha_des: 1.0,
            rho: 1.0,
        }
    }
}

impl PenaltyWeights {
    pub fn smoothing(&self) -> SmoothingWeights {
        SmoothingWeights {
            alpha_range: self.alpha_range,
            alpha_diff: self.alpha_diff,
            alpha_curv: self.alpha_curv,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let named = [
            ("alpha_load", self.alpha_load),
            ("alpha_pv", self.alpha_pv),
            ("alpha_cyc_bes", self.alpha_cyc_bes),
            ("alpha_cyc_ev", self.alpha_cyc_ev),
            ("alpha_range", self.alpha_range),
            ("alpha_diff", self.alpha_diff),
            ("alpha_curv", self.alpha_curv),
            ("alpha_prev", self.alpha_prev),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CoreError::Invalid(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        if !(self.alpha_des > 0.0 && self.alpha_des <= 1.0) {
            return Err(CoreError::Invalid(format!("alpha_des must lie in (0, 1], got {}", self.alpha_des)));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(CoreError::Invalid(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Range, total variation and squared curvature of a schedule, weighted.
pub fn smoothing_cost(p: &[f64], w: &SmoothingWeights) -> Result<f64, CoreError> {
    if p.len() < 3 {
        return Err(CoreError::Invalid(format!(
            "smoothing cost needs at least 3 steps, got {}",
            p.len()
        )));
    }
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    let tv: f64 = p.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let curv: f64 = p.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2)).sum();
    Ok(w.alpha_range * (max - min) + w.alpha_diff * tv + w.alpha_curv * curv)
}
