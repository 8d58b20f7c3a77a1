use dermpc_qp::{DiffOperator, QpBuilder, QpSettings};

use super::{check_len, Agent, AgentError, Combo, QpProx};
use crate::types::{smoothing_cost, SmoothingWeights};

/// The point of common coupling.
///
/// Internally the agent works with the metered flow `m` (import positive):
/// cost `Σ c·Δt·m + smoothing(m)` subject to `|m| ≤ P_PCC`. In the exchange
/// the grid acts as a source when importing, so its exchange schedule is
/// `p = −m` and the microgrid balance reads `Σ p_i = 0`.
#[derive(Debug, Clone)]
pub struct GridAgent {
    name: String,
    price: Vec<f64>,
    dt: f64,
    p_pcc_limit: f64,
    smoothing: SmoothingWeights,
    prev: Vec<f64>,
    alpha_prev: f64,
    cache: QpProx,
}

impl GridAgent {
    pub fn new(price: Vec<f64>, dt: f64, p_pcc_limit: f64, smoothing: SmoothingWeights) -> Self {
        assert!(p_pcc_limit > 0.0, "PCC limit must be positive");
        Self {
            name: "grid".into(),
            price,
            dt,
            p_pcc_limit,
            smoothing,
            prev: Vec::new(),
            alpha_prev: 0.0,
            cache: QpProx::default(),
        }
    }

    /// `prev` is an exchange-sign schedule.
    pub fn with_prev(mut self, prev: Vec<f64>, alpha_prev: f64) -> Self {
        assert!(prev.len() <= self.price.len());
        self.prev = prev;
        self.alpha_prev = alpha_prev;
        self.cache.invalidate();
        self
    }

    pub fn with_settings(mut self, settings: QpSettings) -> Self {
        self.cache = QpProx::new(settings);
        self
    }

    pub fn price(&self) -> &[f64] {
        &self.price
    }

    pub fn p_pcc_limit(&self) -> f64 {
        self.p_pcc_limit
    }

    /// Proximal step on the metered flow: `argmin_m f(m) + (ρ/2)‖m − v‖²`.
    pub fn prox_meter(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        Ok(self.prox(&neg, rho)?.into_iter().map(|x| -x).collect())
    }

    /// Energy cost plus smoothing cost of a metered flow.
    pub fn meter_cost(&self, m: &[f64]) -> f64 {
        let energy: f64 = m.iter().zip(&self.price).map(|(m, c)| c * self.dt * m).sum();
        let smooth = if m.len() >= 3 {
            smoothing_cost(m, &self.smoothing).expect("length checked")
        } else {
            // curvature is undefined below three steps; range and slope still apply
            let tv: f64 = m.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            let range = m.iter().copied().fold(f64::NEG_INFINITY, f64::max) - m.iter().copied().fold(f64::INFINITY, f64::min);
            if m.is_empty() {
                0.0
            } else {
                self.smoothing.alpha_range * range + self.smoothing.alpha_diff * tv
            }
        };
        energy + smooth
    }
}

impl Agent for GridAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> usize {
        self.price.len()
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        let t_len = self.price.len();
        let lim = self.p_pcc_limit;
        let m: Vec<usize> = (0..t_len).map(|_| b.add_var(-lim, lim)).collect();
        for t in 0..t_len {
            b.add_linear(m[t], self.price[t] * self.dt);
        }
        let w = &self.smoothing;
        if w.alpha_curv > 0.0 {
            for t in 0..t_len.saturating_sub(2) {
                b.add_square(&[(m[t], 1.0), (m[t + 1], -2.0), (m[t + 2], 1.0)], 0.0, w.alpha_curv);
            }
        }
        if w.alpha_diff > 0.0 && t_len >= 2 {
            let op = DiffOperator::first_difference(&m);
            b.add_l1(&vec![w.alpha_diff; op.len()], &op);
        }
        if w.alpha_range > 0.0 && t_len >= 2 {
            b.add_range(w.alpha_range, &m);
        }
        for (&x, &target) in m.iter().zip(&self.prev) {
            b.add_square(&[(x, -1.0)], target, self.alpha_prev);
        }
        m.iter().map(|&x| vec![(x, -1.0)]).collect()
    }

    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        check_len(&self.name, self.horizon(), v)?;
        let mut cache = std::mem::take(&mut self.cache);
        let out = cache.prox(&*self, v, rho);
        self.cache = cache;
        out
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let m: Vec<f64> = p.iter().map(|x| -x).collect();
        let prev: f64 = p.iter().zip(&self.prev).map(|(p, q)| (p - q).powi(2)).sum();
        self.meter_cost(&m) + self.alpha_prev * prev
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_grid_is_a_projection() {
        let mut g = GridAgent::new(vec![0.0; 3], 0.25, 200.0, SmoothingWeights::default());
        let m = g.prox_meter(&[10.0, -50.0, 150.0], 1.0).unwrap();
        for (a, b) in m.iter().zip([10.0, -50.0, 150.0]) {
            assert!((a - b).abs() < 1e-6);
        }
        let m = g.prox_meter(&[0.0, 0.0, 500.0], 1.0).unwrap();
        assert!((m[2] - 200.0).abs() < 1e-6);
    }

    #[test]
    fn high_price_sells_at_the_cap() {
        let mut g = GridAgent::new(vec![1e4; 2], 0.25, 200.0, SmoothingWeights::default());
        let m = g.prox_meter(&[0.0, 0.0], 1.0).unwrap();
        assert!(m.iter().all(|v| (v + 200.0).abs() < 1e-6), "{m:?}");
    }

    #[test]
    fn heavy_slope_penalty_flattens() {
        let w = SmoothingWeights {
            alpha_diff: 1e4,
            ..Default::default()
        };
        let mut g = GridAgent::new(vec![0.0; 6], 0.25, 200.0, w);
        let m = g.prox_meter(&[30.0, -20.0, 70.0, 5.0, 0.0, 100.0], 1.0).unwrap();
        for x in &m {
            assert!((x - m[0]).abs() < 1e-4, "{m:?}");
        }
    }
}
