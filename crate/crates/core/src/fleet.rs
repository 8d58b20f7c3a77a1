//! EV fleet construction: battery sizing, vehicle parameters and daily
//! plug-in sessions drawn from configurable distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::agents::StorageParams;
use crate::forecast::EvSession;
use crate::CoreError;

/// kWh per mile used for battery sizing.
pub const KWH_PER_MILE: f64 = 0.311;
/// Batteries hold twice the longest trip.
pub const SIZING_BUFFER: f64 = 2.0;

/// Battery capacity in kWh for a vehicle whose longest trip is `miles`.
pub fn size_ev_battery(longest_trip_miles: f64) -> Result<f64, CoreError> {
    if !(longest_trip_miles > 0.0 && longest_trip_miles.is_finite()) {
        return Err(CoreError::Invalid(format!(
            "longest trip must be a positive distance, got {longest_trip_miles}"
        )));
    }
    Ok(SIZING_BUFFER * longest_trip_miles * KWH_PER_MILE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Normal, clipped to `[lo, hi]`.
    Normal { mean: f64, std: f64, lo: f64, hi: f64 },
    /// Uniform choice among the listed values.
    Empirical { values: Vec<f64> },
}

impl Distribution {
    pub fn validate(&self, what: &str) -> Result<(), CoreError> {
        let ok = match self {
            Self::Constant { value } => value.is_finite(),
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Self::Normal { mean, std, lo, hi } => {
                mean.is_finite() && std.is_finite() && *std >= 0.0 && lo.is_finite() && hi.is_finite() && lo <= hi
            }
            Self::Empirical { values } => !values.is_empty() && values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::Invalid(format!("{what}: invalid or empty distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            Self::Normal { mean, std, lo, hi } => {
                let x = if *std > 0.0 {
                    Normal::new(*mean, *std).expect("validated").sample(rng)
                } else {
                    *mean
                };
                x.clamp(*lo, *hi)
            }
            Self::Empirical { values } => values[rng.random_range(0..values.len())],
        }
    }

    /// Largest value the distribution can produce.
    pub fn max(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Uniform { hi, .. } | Self::Normal { hi, .. } => *hi,
            Self::Empirical { values } => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EVFleetSpec {
    pub count: usize,
    pub charger_kw: f64,
    /// Charging and discharging efficiency.
    pub efficiency: f64,
    /// Fraction of charge retained over a day.
    pub retention_per_day: f64,
    pub q_min_frac: f64,
    pub q_max_frac: f64,
    /// Longest trip per vehicle, miles; batteries are sized from it.
    pub longest_trip_miles: Distribution,
    /// Explicit capacities (kWh) that override the sizing rule.
    pub battery_kwh: Option<Vec<f64>>,
    /// Step of the day.
    pub arrival: Distribution,
    /// Step of the day.
    pub departure: Distribution,
    /// Fraction of capacity at arrival.
    pub initial_charge: Distribution,
    /// Fraction of capacity wanted at departure.
    pub desired_charge: Distribution,
    pub alpha_cyc: Option<f64>,
    /// Whether vehicles may discharge into the microgrid.
    pub discharge: bool,
}

impl Default for EVFleetSpec {
    fn default() -> Self {
        Self {
            count: 20,
            charger_kw: 7.2,
            efficiency: 0.9,
            retention_per_day: 1.0,
            q_min_frac: 0.3,
            q_max_frac: 0.9,
            longest_trip_miles: Distribution::Uniform { lo: 20.0, hi: 50.0 },
            battery_kwh: None,
            arrival: Distribution::Normal {
                mean: 34.0,
                std: 3.0,
                lo: 28.0,
                hi: 42.0,
            },
            departure: Distribution::Normal {
                mean: 70.0,
                std: 3.0,
                lo: 62.0,
                hi: 78.0,
            },
            initial_charge: Distribution::Uniform { lo: 0.3, hi: 0.6 },
            desired_charge: Distribution::Empirical {
                values: vec![0.7, 0.75, 0.8],
            },
            alpha_cyc: None,
            discharge: false,
        }
    }
}

impl EVFleetSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: String| Err(CoreError::Invalid(format!("fleet: {m}")));
        if !(self.charger_kw > 0.0) {
            return bad(format!("charger_kw must be positive, got {}", self.charger_kw));
        }
        for (name, v) in [("efficiency", self.efficiency), ("retention_per_day", self.retention_per_day)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(0.0 <= self.q_min_frac && self.q_min_frac <= self.q_max_frac && self.q_max_frac <= 1.0) {
            return bad("need 0 <= q_min_frac <= q_max_frac <= 1".into());
        }
        if let Some(caps) = &self.battery_kwh {
            if caps.len() != self.count || caps.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return bad("battery_kwh needs one positive capacity per vehicle".into());
            }
        }
        if let Some(a) = self.alpha_cyc {
            if !(a >= 0.0) {
                return bad("alpha_cyc must be nonnegative".into());
            }
        }
        self.longest_trip_miles.validate("fleet.longest_trip_miles")?;
        self.arrival.validate("fleet.arrival")?;
        self.departure.validate("fleet.departure")?;
        self.initial_charge.validate("fleet.initial_charge")?;
        self.desired_charge.validate("fleet.desired_charge")?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub name: String,
    /// Per-step battery model.
    pub params: StorageParams,
    /// Desired departure charge, kWh: the upper end of the desired-charge
    /// distribution, held inside the charge bounds.
    pub q_des: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub vehicles: Vec<Vehicle>,
    /// Per vehicle, one session per day in step order.
    pub sessions: Vec<Vec<EvSession>>,
}

impl Fleet {
    pub fn empty() -> Self {
        Self {
            vehicles: Vec::new(),
            sessions: Vec::new(),
        }
    }
}

/// Draws the fleet and its sessions for days `first_day .. first_day + days`
/// (day 0 starts at simulated step 0). Deterministic in `seed`.
pub fn sample_fleet(
    spec: &EVFleetSpec,
    seed: u64,
    step_minutes: u32,
    first_day: i64,
    days: usize,
    alpha_cyc: f64,
) -> Result<Fleet, CoreError> {
    spec.validate()?;
    let period = (24 * 60 / step_minutes) as i64;
    let mut vehicles = Vec::with_capacity(spec.count);
    let mut sessions = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1000 + i as u64);
        let q_cap = match &spec.battery_kwh {
            Some(caps) => caps[i],
            None => size_ev_battery(spec.longest_trip_miles.sample(&mut rng).max(1e-3))?,
        };
        let params = StorageParams {
            c_max: spec.charger_kw,
            d_max: if spec.discharge { spec.charger_kw } else { 0.0 },
            eta_c: spec.efficiency,
            eta_d: spec.efficiency,
            eta_q: spec.retention_per_day.powf(1.0 / period as f64),
            q_min_frac: spec.q_min_frac,
            q_max_frac: spec.q_max_frac,
            q_cap,
            alpha_cyc: spec.alpha_cyc.unwrap_or(alpha_cyc),
            throughput_cost: 1e-4,
        };
        let q_des = (spec.desired_charge.max() * q_cap).clamp(params.q_min(), params.q_max());
        let mut list = Vec::with_capacity(days);
        for d in 0..days {
            let day_start = (first_day + d as i64) * period;
            let arr = (spec.arrival.sample(&mut rng).round() as i64).clamp(0, period - 1);
            let mut dep = spec.departure.sample(&mut rng).round() as i64;
            if dep <= arr {
                dep = arr + 1;
            }
            let dep = dep.min(arr + period - 1);
            let q_init = (spec.initial_charge.sample(&mut rng) * q_cap).clamp(params.q_min(), params.q_max());
            list.push(EvSession {
                arrival: day_start + arr,
                departure: day_start + dep,
                q_init,
                q_des,
            });
        }
        vehicles.push(Vehicle {
            name: format!("ev{i:02}"),
            params,
            q_des,
        });
        sessions.push(list);
    }
    Ok(Fleet { vehicles, sessions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizing_rule() {
        for (miles, kwh) in [(40.0, 24.88), (0.5, 0.311), (100.0, 62.2)] {
            assert!((size_ev_battery(miles).unwrap() - kwh).abs() < 1e-12);
        }
        assert!(size_ev_battery(0.0).is_err());
        assert!(size_ev_battery(-3.0).is_err());
    }

    #[test]
    fn degenerate_distributions_give_identical_vehicles() {
        let spec = EVFleetSpec {
            count: 4,
            longest_trip_miles: Distribution::Constant { value: 30.0 },
            arrival: Distribution::Constant { value: 32.0 },
            departure: Distribution::Constant { value: 70.0 },
            initial_charge: Distribution::Constant { value: 0.4 },
            desired_charge: Distribution::Constant { value: 0.8 },
            ..Default::default()
        };
        let f = sample_fleet(&spec, 3, 15, 0, 2, 0.0).unwrap();
        for v in &f.vehicles[1..] {
            assert_eq!(v.params, f.vehicles[0].params);
        }
        for s in &f.sessions[1..] {
            assert_eq!(s, &f.sessions[0]);
        }
        assert_eq!(f.sessions[0][1].arrival, 96 + 32);
    }

    #[test]
    fn same_seed_same_fleet() {
        let spec = EVFleetSpec::default();
        assert_eq!(
            sample_fleet(&spec, 11, 15, -5, 8, 0.001).unwrap(),
            sample_fleet(&spec, 11, 15, -5, 8, 0.001).unwrap()
        );
        assert_ne!(
            sample_fleet(&spec, 11, 15, -5, 8, 0.001).unwrap(),
            sample_fleet(&spec, 12, 15, -5, 8, 0.001).unwrap()
        );
    }

    #[test]
    fn initial_charge_respects_bounds() {
        let spec = EVFleetSpec {
            count: 10,
            initial_charge: Distribution::Uniform { lo: 0.0, hi: 1.0 },
            ..Default::default()
        };
        let f = sample_fleet(&spec, 5, 15, 0, 100, 0.0).unwrap();
        let mut n = 0;
        for (v, list) in f.vehicles.iter().zip(&f.sessions) {
            for s in list {
                let cap = v.params.q_cap;
                assert!(s.q_init >= 0.3 * cap - 1e-12 && s.q_init <= 0.9 * cap + 1e-12);
                assert!(s.arrival < s.departure);
                n += 1;
            }
        }
        assert_eq!(n, 1000);
    }
}
