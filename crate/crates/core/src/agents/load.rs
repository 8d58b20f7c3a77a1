use dermpc_qp::QpBuilder;

use super::{check_len, Agent, AgentError, Combo};

/// Per-step separable tracking objective `α‖target − p‖² + α_prev‖p − prev‖²`
/// over a box. Load and PV differ only in the box.
#[derive(Debug, Clone, PartialEq)]
struct Tracking {
    target: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    alpha: f64,
    prev: Vec<f64>,
    alpha_prev: f64,
}

impl Tracking {
    fn prox(&self, v: &[f64], rho: f64) -> Vec<f64> {
        (0..self.target.len())
            .map(|t| {
                let (mut num, mut den) = (2.0 * self.alpha * self.target[t] + rho * v[t], 2.0 * self.alpha + rho);
                if let Some(&pv) = self.prev.get(t) {
                    num += 2.0 * self.alpha_prev * pv;
                    den += 2.0 * self.alpha_prev;
                }
                (num / den).clamp(self.lower[t], self.upper[t])
            })
            .collect()
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        (0..self.target.len())
            .map(|t| {
                let x = b.add_var(self.lower[t], self.upper[t]);
                b.add_square(&[(x, 1.0)], self.target[t], self.alpha);
                if let Some(&pv) = self.prev.get(t) {
                    b.add_square(&[(x, 1.0)], pv, self.alpha_prev);
                }
                vec![(x, 1.0)]
            })
            .collect()
    }

    fn cost(&self, p: &[f64]) -> f64 {
        let track: f64 = p.iter().zip(&self.target).map(|(p, h)| (h - p).powi(2)).sum();
        let prev: f64 = p.iter().zip(&self.prev).map(|(p, q)| (p - q).powi(2)).sum();
        self.alpha * track + self.alpha_prev * prev
    }
}

/// Curtailable load: `β·p̂ ≤ p ≤ p̂` with cost `α_load‖p̂ − p‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadAgent {
    name: String,
    beta: f64,
    inner: Tracking,
}

impl LoadAgent {
    pub fn new(demand_forecast: Vec<f64>, beta: f64, alpha_load: f64) -> Self {
        assert!((0.0..=1.0).contains(&beta), "beta must lie in [0, 1]");
        assert!(demand_forecast.iter().all(|&d| d >= 0.0), "demand forecast must be nonnegative");
        let lower = demand_forecast.iter().map(|d| beta * d).collect();
        let upper = demand_forecast.clone();
        Self {
            name: "load".into(),
            beta,
            inner: Tracking {
                target: demand_forecast,
                lower,
                upper,
                alpha: alpha_load,
                prev: Vec::new(),
                alpha_prev: 0.0,
            },
        }
    }

    /// Adds `α_prev‖p − prev‖²` over the first `prev.len()` steps.
    pub fn with_prev(mut self, prev: Vec<f64>, alpha_prev: f64) -> Self {
        assert!(prev.len() <= self.inner.target.len());
        self.inner.prev = prev;
        self.inner.alpha_prev = alpha_prev;
        self
    }

    pub fn forecast(&self) -> &[f64] {
        &self.inner.target
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Agent for LoadAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> usize {
        self.inner.target.len()
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        self.inner.encode(b)
    }

    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        check_len(&self.name, self.horizon(), v)?;
        Ok(self.inner.prox(v, rho))
    }

    fn cost(&self, p: &[f64]) -> f64 {
        self.inner.cost(p)
    }
}

/// Curtailable PV array: `p̂ ≤ p ≤ 0` (generation negative) with cost
/// `α_pv‖p̂ − p‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PvAgent {
    name: String,
    inner: Tracking,
}

impl PvAgent {
    pub fn new(generation_forecast: Vec<f64>, alpha_pv: f64) -> Self {
        assert!(generation_forecast.iter().all(|&g| g <= 0.0), "generation forecast must be nonpositive");
        let lower = generation_forecast.clone();
        let upper = vec![0.0; generation_forecast.len()];
        Self {
            name: "pv".into(),
            inner: Tracking {
                target: generation_forecast,
                lower,
                upper,
                alpha: alpha_pv,
                prev: Vec::new(),
                alpha_prev: 0.0,
            },
        }
    }

    pub fn with_prev(mut self, prev: Vec<f64>, alpha_prev: f64) -> Self {
        assert!(prev.len() <= self.inner.target.len());
        self.inner.prev = prev;
        self.inner.alpha_prev = alpha_prev;
        self
    }

    pub fn forecast(&self) -> &[f64] {
        &self.inner.target
    }
}

impl Agent for PvAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> usize {
        self.inner.target.len()
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        self.inner.encode(b)
    }

    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        check_len(&self.name, self.horizon(), v)?;
        Ok(self.inner.prox(v, rho))
    }

    fn cost(&self, p: &[f64]) -> f64 {
        self.inner.cost(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_curtails_to_weighted_average() {
        let mut a = LoadAgent::new(vec![10.0], 0.5, 1.0);
        assert_eq!(a.prox(&[0.0], 2.0).unwrap(), vec![5.0]);
    }

    #[test]
    fn load_at_forecast_stays() {
        let f = vec![3.0, 8.0, 1.0];
        let mut a = LoadAgent::new(f.clone(), 0.2, 0.7);
        for (p, h) in a.prox(&f, 1.3).unwrap().iter().zip(&f) {
            assert!((p - h).abs() < 1e-12);
        }
    }

    #[test]
    fn rigid_load_ignores_target() {
        let f = vec![3.0, 8.0];
        let mut a = LoadAgent::new(f.clone(), 1.0, 0.1);
        assert_eq!(a.prox(&[-100.0, 100.0], 1.0).unwrap(), f);
    }

    #[test]
    fn pv_projection_and_interior() {
        let mut a = PvAgent::new(vec![-100.0], 0.0);
        assert_eq!(a.prox(&[-150.0], 1.0).unwrap(), vec![-100.0]);
        let mut b = PvAgent::new(vec![-100.0], 1.0);
        assert_eq!(b.prox(&[0.0], 2.0).unwrap(), vec![-50.0]);
        let mut c = PvAgent::new(vec![-100.0], 1e9);
        assert!((c.prox(&[0.0], 1.0).unwrap()[0] + 100.0).abs() < 1e-6);
    }
}
