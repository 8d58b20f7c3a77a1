use dermpc_qp::QpBuilder;

use super::{check_len, Agent, AgentError, Combo};

/// `Σ w_t (p_t − a_t)²` over a box. Small enough to reason about by hand,
/// which makes it the workhorse of coordinator tests.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAgent {
    name: String,
    pub target: Vec<f64>,
    pub weight: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QuadraticAgent {
    pub fn new(name: impl Into<String>, target: Vec<f64>, weight: Vec<f64>) -> Self {
        let t = target.len();
        assert_eq!(weight.len(), t);
        assert!(weight.iter().all(|&w| w >= 0.0));
        Self {
            name: name.into(),
            target,
            weight,
            lower: vec![f64::NEG_INFINITY; t],
            upper: vec![f64::INFINITY; t],
        }
    }

    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), self.target.len());
        assert_eq!(upper.len(), self.target.len());
        self.lower = lower;
        self.upper = upper;
        self
    }
}

impl Agent for QuadraticAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn horizon(&self) -> usize {
        self.target.len()
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        (0..self.target.len())
            .map(|t| {
                let x = b.add_var(self.lower[t], self.upper[t]);
                b.add_square(&[(x, 1.0)], self.target[t], self.weight[t]);
                vec![(x, 1.0)]
            })
            .collect()
    }

    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        check_len(&self.name, self.horizon(), v)?;
        Ok((0..v.len())
            .map(|t| {
                let w = self.weight[t];
                ((2.0 * w * self.target[t] + rho * v[t]) / (2.0 * w + rho)).clamp(self.lower[t], self.upper[t])
            })
            .collect())
    }

    fn cost(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.target)
            .zip(&self.weight)
            .map(|((p, a), w)| w * (p - a).powi(2))
            .sum()
    }
}
