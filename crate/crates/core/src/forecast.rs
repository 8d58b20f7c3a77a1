//! Forecasting of PV and load from history, and of EV session parameters.
//!
//! Signals are modeled as a periodic baseline plus an autoregressive residual.
//! The baseline is an expectile fit over one period; the residual correction
//! fades geometrically so forecasts revert to the baseline.
//!
//! All signal forecasting is done on magnitudes (nonnegative kW). Callers
//! restore the sign convention afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agents::StorageParams;
use crate::CoreError;

/// Rolling window of a uniformly sampled signal. Step indices are absolute
/// simulation steps (negative before the simulation origin).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    start: i64,
    values: Vec<f64>,
    capacity: usize,
}

impl HistoryBuffer {
    /// Empty buffer whose first value will belong to step `start`.
    pub fn new(start: i64, capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            start,
            values: Vec::with_capacity(capacity + 1),
            capacity,
        }
    }

    pub fn from_values(start: i64, values: &[f64], capacity: usize) -> Self {
        let mut h = Self::new(start, capacity);
        for &v in values {
            h.push(v);
        }
        h
    }

    /// Appends the value of step `self.end()`, dropping the oldest value once
    /// the buffer is full.
    pub fn push(&mut self, value: f64) {
        self.values.push(value);
        if self.values.len() > self.capacity {
            self.values.remove(0);
            self.start += 1;
        }
    }

    /// Step of the oldest stored value.
    pub fn start(&self) -> i64 {
        self.start
    }

    /// Step following the newest stored value.
    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn slot(step: i64, period: usize) -> usize {
    step.rem_euclid(period as i64) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSettings {
    /// Weight of deviations where the baseline lies below the data.
    pub gamma_asym: f64,
    pub gamma_curv: f64,
    pub ar_order: usize,
    pub lambda: f64,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        Self {
            gamma_asym: 1.0,
            gamma_curv: 0.5,
            ar_order: 4,
            lambda: 0.7,
        }
    }
}

impl ForecastSettings {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.gamma_asym >= 0.0 && self.gamma_curv >= 0.0) {
            return Err(CoreError::Invalid("gamma_asym and gamma_curv must be nonnegative".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(CoreError::Invalid(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        Ok(())
    }
}

const IRLS_ROUNDS: usize = 100;

/// Expectile fit of a periodic baseline. Returns one value per slot of the
/// period (slot = step mod period).
///
/// Minimizes over periodic `x`
/// `Σ_τ w_τ (x(τ) − h(τ))² + γ_curv Σ_τ (x(τ−1) − 2x(τ) + x(τ+1))²`
/// with `w_τ = 1` where the baseline is above the data and `γ_asym` where it
/// is below, by reweighting until the weights stop changing.
pub fn fit_baseline(hist: &HistoryBuffer, gamma_asym: f64, gamma_curv: f64, period: usize) -> Result<Vec<f64>, CoreError> {
    if period == 0 || hist.len() < 2 * period {
        return Err(CoreError::Invalid(format!(
            "baseline fit needs two full periods ({} samples), got {}",
            2 * period,
            hist.len()
        )));
    }
    let slots: Vec<usize> = (0..hist.len()).map(|k| slot(hist.start() + k as i64, period)).collect();
    let data = hist.values();

    let mut counts = vec![0.0; period];
    for &s in &slots {
        counts[s] += 1.0;
    }
    // γ_curv·Dᵀ diag(counts) D for the circular second difference D
    let mut curv = DMatrix::<f64>::zeros(period, period);
    if gamma_curv > 0.0 {
        for s in 0..period {
            let idx = [(s + period - 1) % period, s, (s + 1) % period];
            let coef = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    curv[(idx[a], idx[b])] += gamma_curv * counts[s] * coef[a] * coef[b];
                }
            }
        }
    }

    let mut x: Vec<f64> = {
        let mut sum = vec![0.0; period];
        for (&s, &h) in slots.iter().zip(data) {
            sum[s] += h;
        }
        sum.iter().zip(&counts).map(|(s, c)| s / c).collect()
    };
    let mut below: Vec<bool> = vec![false; data.len()];
    for round in 0..IRLS_ROUNDS {
        let next: Vec<bool> = slots.iter().zip(data).map(|(&s, &h)| x[s] < h).collect();
        if round > 0 && next == below {
            break;
        }
        below = next;
        let mut a = curv.clone();
        let mut rhs = DVector::<f64>::zeros(period);
        for ((&s, &h), &b) in slots.iter().zip(data).zip(&below) {
            let w = if b { gamma_asym } else { 1.0 };
            a[(s, s)] += w;
            rhs[s] += w * h;
        }
        let sol = match a.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| CoreError::Invalid("baseline system is singular".into()))?,
        };
        x = sol.iter().copied().collect();
    }
    Ok(x)
}

/// Least-squares AR(n) fit `a = M†b` with rows `M_t = [r(t−1) … r(t−n)]` and
/// `b_t = r(t)`; the minimum-norm solution when `M` is rank deficient.
pub fn fit_residual_ar(residuals: &[f64], n: usize) -> Vec<f64> {
    if n == 0 || residuals.len() <= n {
        return vec![0.0; n];
    }
    let rows = residuals.len() - n;
    let m = DMatrix::from_fn(rows, n, |i, j| residuals[n + i - 1 - j]);
    let b = DVector::from_fn(rows, |i, _| residuals[n + i]);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return vec![0.0; n];
    }
    let eps = smax * 1e-12 * rows.max(n) as f64;
    svd.solve(&b, eps).expect("u and v computed").iter().copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub baseline: Vec<f64>,
    pub ar_weights: Vec<f64>,
    pub lambda: f64,
    pub gamma_asym: f64,
    pub gamma_curv: f64,
}

impl ForecastModel {
    pub fn fit(hist: &HistoryBuffer, settings: &ForecastSettings, period: usize) -> Result<Self, CoreError> {
        let baseline = fit_baseline(hist, settings.gamma_asym, settings.gamma_curv, period)?;
        let mut model = Self {
            baseline,
            ar_weights: vec![0.0; settings.ar_order],
            lambda: settings.lambda,
            gamma_asym: settings.gamma_asym,
            gamma_curv: settings.gamma_curv,
        };
        let r = model.residuals(hist);
        model.ar_weights = fit_residual_ar(&r, settings.ar_order);
        Ok(model)
    }

    pub fn period(&self) -> usize {
        self.baseline.len()
    }

    pub fn baseline_at(&self, step: i64) -> f64 {
        self.baseline[slot(step, self.period())]
    }

    /// `actual − baseline` over the buffer.
    pub fn residuals(&self, hist: &HistoryBuffer) -> Vec<f64> {
        hist.values()
            .iter()
            .enumerate()
            .map(|(k, v)| v - self.baseline_at(hist.start() + k as i64))
            .collect()
    }

    /// Damped residual correction for the `horizon` steps after the buffer:
    /// the AR recursion is run on the residuals (feeding predictions back
    /// for lags past the data) and step `k` is scaled by `λ^k`.
    pub fn correction(&self, hist: &HistoryBuffer, horizon: usize) -> Vec<f64> {
        let n = self.ar_weights.len();
        let mut lags: Vec<f64> = self.residuals(hist);
        let keep = lags.len().saturating_sub(n);
        lags.drain(..keep);
        let mut out = Vec::with_capacity(horizon);
        let mut damp = 1.0;
        for _ in 0..horizon {
            let len = lags.len();
            let s: f64 = self
                .ar_weights
                .iter()
                .enumerate()
                .filter(|&(j, _)| j < len)
                .map(|(j, a)| a * lags[len - 1 - j])
                .sum();
            out.push(damp * s);
            lags.push(s);
            damp *= self.lambda;
        }
        out
    }

    /// Baseline plus damped correction for the `horizon` steps after the buffer.
    pub fn predict(&self, hist: &HistoryBuffer, horizon: usize) -> Vec<f64> {
        self.correction(hist, horizon)
            .into_iter()
            .enumerate()
            .map(|(k, c)| self.baseline_at(hist.end() + k as i64) + c)
            .collect()
    }
}

/// Fits on the buffer and predicts `horizon` magnitudes, clamped at zero.
pub fn forecast_magnitude(hist: &HistoryBuffer, settings: &ForecastSettings, period: usize, horizon: usize) -> Result<Vec<f64>, CoreError> {
    let model = ForecastModel::fit(hist, settings, period)?;
    Ok(model.predict(hist, horizon).into_iter().map(|v| v.max(0.0)).collect())
}

/// One plug-in session, in absolute simulation steps (`departure` exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvSession {
    pub arrival: i64,
    pub departure: i64,
    /// kWh at arrival.
    pub q_init: f64,
    /// kWh desired at departure.
    pub q_des: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateSource {
    Observed,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvParamEstimate {
    pub t_arr: i64,
    pub t_dep: i64,
    pub q_init: f64,
    pub q_des: f64,
    pub source: EstimateSource,
}

/// Time-of-day and charge statistics of past sessions: the most frequent
/// arrival slot, departure slot and initial charge (1-step and 1-kWh bins,
/// ties to the lowest bin) and the largest desired charge seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionTemplate {
    pub arrival_slot: usize,
    pub departure_slot: usize,
    pub q_init: f64,
    pub q_des: f64,
}

impl SessionTemplate {
    pub fn from_history(history: &[EvSession], period: usize) -> Option<Self> {
        if history.is_empty() {
            return None;
        }
        let arr = mode_by(history.iter().map(|s| (slot(s.arrival, period) as i64, 0.0))).0 as usize;
        let dep = mode_by(history.iter().map(|s| (slot(s.departure, period) as i64, 0.0))).0 as usize;
        let q_init = mode_by(history.iter().map(|s| (s.q_init.floor() as i64, s.q_init))).1;
        let q_des = history.iter().map(|s| s.q_des).fold(f64::NEG_INFINITY, f64::max);
        Some(Self {
            arrival_slot: arr,
            departure_slot: dep,
            q_init,
            q_des,
        })
    }

    fn from_session(s: &EvSession, period: usize) -> Self {
        Self {
            arrival_slot: slot(s.arrival, period),
            departure_slot: slot(s.departure, period),
            q_init: s.q_init,
            q_des: s.q_des,
        }
    }

    /// The template placed on the day of `day_start`.
    fn place(&self, day_start: i64, period: usize) -> (i64, i64) {
        let arr = day_start + self.arrival_slot as i64;
        let mut dep = day_start + self.departure_slot as i64;
        if dep <= arr {
            dep += period as i64;
        }
        (arr, dep)
    }
}

// Most frequent bin (lowest on ties) and the mean payload of its members.
fn mode_by(items: impl Iterator<Item = (i64, f64)>) -> (i64, f64) {
    let mut bins: std::collections::BTreeMap<i64, (usize, f64)> = std::collections::BTreeMap::new();
    for (k, v) in items {
        let e = bins.entry(k).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += v;
    }
    let mut best = (i64::MIN, 0usize, 0.0);
    for (&k, &(c, sum)) in &bins {
        if c > best.1 {
            best = (k, c, sum / c as f64);
        }
    }
    (best.0, best.2)
}

/// Session parameters to plan with at step `now`.
///
/// `last` is the most recent session whose arrival has been revealed. While
/// the vehicle is plugged in (`last` has arrived and not left) it is returned
/// as observed. Otherwise the next session is predicted from `history` (or
/// `prior` when there is no history yet), placed on the first day whose
/// predicted departure is still ahead and that has not had a session yet.
pub fn estimate_ev_params(
    history: &[EvSession],
    prior: Option<&EvSession>,
    battery: &StorageParams,
    now: i64,
    period: usize,
    last: Option<&EvSession>,
) -> Result<EvParamEstimate, CoreError> {
    if let Some(s) = last {
        if s.arrival <= now && now < s.departure {
            return Ok(EvParamEstimate {
                t_arr: s.arrival,
                t_dep: s.departure,
                q_init: s.q_init,
                q_des: s.q_des,
                source: EstimateSource::Observed,
            });
        }
    }
    let template = match SessionTemplate::from_history(history, period) {
        Some(t) => t,
        None => match prior {
            Some(p) => SessionTemplate::from_session(p, period),
            None => return Err(CoreError::Invalid("no EV history and no prior to estimate from".into())),
        },
    };
    let p = period as i64;
    let taken_day = last.map(|s| s.arrival.div_euclid(p));
    let mut day = now.div_euclid(p);
    let (arr, dep) = loop {
        let (arr, dep) = template.place(day * p, period);
        if dep > now && taken_day.is_none_or(|d| day > d) {
            break (arr, dep);
        }
        day += 1;
    };
    let arr = arr.max(now);
    let q_init = template.q_init.clamp(battery.q_min(), battery.q_max());
    let q_des = template.q_des.clamp(battery.q_min(), battery.q_max());
    Ok(EvParamEstimate {
        t_arr: arr,
        t_dep: dep.max(arr + 1),
        q_init,
        q_des,
        source: EstimateSource::Predicted,
    })
}
