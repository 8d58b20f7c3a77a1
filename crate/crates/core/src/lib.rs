//! Decentralized microgrid scheduling.
//!
//! Independent controllers for load, PV, a stationary battery, an EV fleet and
//! the grid connection agree on power schedules through exchange ADMM, inside
//! a receding-horizon (MPC) loop with forecasting. A centralized solver over
//! the same agent encodings serves as the reference.

pub mod agents;
pub mod compare;
pub mod data;
pub mod exchange;
pub mod fleet;
pub mod forecast;
pub mod metrics;
pub mod mpc;
pub mod reference;
pub mod scenario;
pub mod types;

pub use types::{
    power_to_energy, smoothing_cost, ChargeTrajectory, PenaltyWeights, PowerSchedule, PriceSchedule, SmoothingWeights,
    TimeGrid,
};

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Agent(#[from] agents::AgentError),
    #[error("centralized problem infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Qp(#[from] dermpc_qp::QpError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}
