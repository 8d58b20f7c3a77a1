//! Receding-horizon control loop.
//!
//! At every step the controller forecasts PV and load, estimates the next
//! plug-in session of every vehicle, builds one agent per device over the
//! lookahead, solves for a balanced plan and executes only the first step
//! against what actually happens. The grid connection absorbs the mismatch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use dermpc_qp::QpBuilder;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError, Combo, GridAgent, LoadAgent, PvAgent, StorageAgent, StorageParams, Terminal};
use crate::exchange::{run_exchange, ExchangeSettings, ExchangeState, ExchangeStatus};
use crate::forecast::{estimate_ev_params, EstimateSource, EvSession};
use crate::reference::solve_centralized;
use crate::scenario::PreparedScenario;
use crate::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exchange ADMM on forecasts.
    #[default]
    Admm,
    /// One centralized solve per step on forecasts.
    Centralized,
    /// Centralized with the realized future in place of forecasts.
    Prescient,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Admm, Mode::Centralized, Mode::Prescient];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Admm => "admm",
            Mode::Centralized => "centralized",
            Mode::Prescient => "prescient",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected admm, centralized or prescient)"))
    }
}

/// The devices of the microgrid as one agent type.
#[derive(Debug, Clone)]
pub enum DeviceAgent {
    Load(LoadAgent),
    Pv(PvAgent),
    Storage(StorageAgent),
    Grid(GridAgent),
}

impl Agent for DeviceAgent {
    fn name(&self) -> &str {
        match self {
            Self::Load(a) => a.name(),
            Self::Pv(a) => a.name(),
            Self::Storage(a) => a.name(),
            Self::Grid(a) => a.name(),
        }
    }

    fn horizon(&self) -> usize {
        match self {
            Self::Load(a) => a.horizon(),
            Self::Pv(a) => a.horizon(),
            Self::Storage(a) => a.horizon(),
            Self::Grid(a) => a.horizon(),
        }
    }

    fn encode(&self, b: &mut QpBuilder) -> Vec<Combo> {
        match self {
            Self::Load(a) => a.encode(b),
            Self::Pv(a) => a.encode(b),
            Self::Storage(a) => a.encode(b),
            Self::Grid(a) => a.encode(b),
        }
    }

    fn prox(&mut self, v: &[f64], rho: f64) -> Result<Vec<f64>, AgentError> {
        match self {
            Self::Load(a) => a.prox(v, rho),
            Self::Pv(a) => a.prox(v, rho),
            Self::Storage(a) => a.prox(v, rho),
            Self::Grid(a) => a.prox(v, rho),
        }
    }

    fn cost(&self, p: &[f64]) -> f64 {
        match self {
            Self::Load(a) => a.cost(p),
            Self::Pv(a) => a.cost(p),
            Self::Storage(a) => a.cost(p),
            Self::Grid(a) => a.cost(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// The net demand left for the grid exceeded the connection limit.
    PccViolation { step: usize, requested_kw: f64, applied_kw: f64 },
    EmergencyLoadCurtailment { step: usize, kw: f64 },
    StorageChargeReduced { step: usize, agent: String, kw: f64 },
    ExtraPvCurtailment { step: usize, kw: f64 },
    StorageDischargeReduced { step: usize, agent: String, kw: f64 },
    /// A plugged-in vehicle cannot reach its departure target; the target
    /// was lowered by `kwh` for planning.
    DepartureRelaxed { step: usize, vehicle: String, kwh: f64 },
    ExchangeMaxIterations { step: usize, iterations: usize },
    EvShortfall { step: usize, vehicle: String, kwh: f64 },
}

/// One line of the per-step trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub horizon: usize,
    /// Planned `Σ f_i` over the lookahead.
    pub objective: f64,
    pub iterations: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub converged: bool,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Departure {
    pub vehicle: usize,
    pub step: usize,
    /// `α_des·q_des`, kWh.
    pub required: f64,
    pub achieved: f64,
}

/// Realized schedules of a run. Power in kW per step, charge in kWh at step
/// boundaries. `grid` is the metered flow (import positive), so at every
/// step `load + pv + bes + Σ ev = grid`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub mode: Mode,
    pub steps: usize,
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
    pub bes: Vec<f64>,
    pub ev: Vec<Vec<f64>>,
    pub grid: Vec<f64>,
    pub bes_charge: Vec<f64>,
    pub ev_charge: Vec<Vec<f64>>,
    /// Charge the plan of each step expected after that step.
    pub bes_planned_next: Vec<f64>,
    pub plugged: Vec<Vec<bool>>,
    pub departures: Vec<Departure>,
    pub records: Vec<StepRecord>,
    /// Exchange-sign schedules planned at the first step.
    pub first_plan: Vec<Vec<f64>>,
}

impl SimulationResult {
    fn new(mode: Mode, n_ev: usize, q_bes: f64, q_ev: &[f64]) -> Self {
        Self {
            mode,
            steps: 0,
            load: Vec::new(),
            pv: Vec::new(),
            bes: Vec::new(),
            ev: vec![Vec::new(); n_ev],
            grid: Vec::new(),
            bes_charge: vec![q_bes],
            ev_charge: q_ev.iter().map(|&q| vec![q]).collect(),
            bes_planned_next: Vec::new(),
            plugged: vec![Vec::new(); n_ev],
            departures: Vec::new(),
            records: Vec::new(),
            first_plan: Vec::new(),
        }
    }

    pub fn ev_total(&self, t: usize) -> f64 {
        self.ev.iter().map(|e| e[t]).sum()
    }

    /// `load + pv + bes + Σ ev − grid` at step `t`.
    pub fn imbalance(&self, t: usize) -> f64 {
        self.load[t] + self.pv[t] + self.bes[t] + self.ev_total(t) - self.grid[t]
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.records.iter().flat_map(|r| r.events.iter())
    }

    /// Writes one JSON object per step.
    pub fn write_trace_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Controller state between steps.
#[derive(Debug, Clone)]
pub struct MPCState {
    pub t: usize,
    pub mode: Mode,
    pub q_bes: f64,
    pub q_ev: Vec<f64>,
    /// Exchange-sign schedules of the previous plan.
    pub prev_plan: Option<Vec<Vec<f64>>>,
    pub prev_exchange: Option<ExchangeState>,
    pub result: SimulationResult,
}

impl MPCState {
    pub fn new(scenario: &PreparedScenario, mode: Mode) -> Self {
        let q_bes = scenario.config.bes.q_init_frac * scenario.config.bes.q_cap;
        let q_ev: Vec<f64> = scenario
            .fleet
            .sessions
            .iter()
            .map(|list| {
                list.iter()
                    .find(|s| s.departure > 0)
                    .map_or(0.0, |s| s.q_init)
            })
            .collect();
        Self {
            t: 0,
            mode,
            q_bes,
            result: SimulationResult::new(mode, q_ev.len(), q_bes, &q_ev),
            q_ev,
            prev_plan: None,
            prev_exchange: None,
        }
    }
}

/// Session of `list` in progress at step `t`, if any.
fn ongoing(list: &[EvSession], t: i64) -> Option<&EvSession> {
    list.iter().find(|s| s.arrival <= t && t < s.departure)
}

// Start of the day containing step t (day 0 starts at step 0).
fn day_start(t: i64, period: usize) -> i64 {
    t.div_euclid(period as i64) * period as i64
}

struct Layout {
    bes: Option<usize>,
    ev: usize,
    grid: usize,
}

impl Layout {
    fn new(has_bes: bool, n_ev: usize) -> Self {
        let bes = has_bes.then_some(2);
        let ev = 2 + has_bes as usize;
        Self {
            bes,
            ev,
            grid: ev + n_ev,
        }
    }

    fn len(&self) -> usize {
        self.grid + 1
    }
}

fn shifted(prev: &[f64], len: usize) -> Vec<f64> {
    prev.iter().skip(1).take(len).copied().collect()
}

fn padded(prev: &[f64], len: usize) -> Vec<f64> {
    let mut v = shifted(prev, len);
    let last = v.last().copied().or(prev.last().copied()).unwrap_or(0.0);
    v.resize(len, last);
    v
}

fn build_agents(
    scenario: &PreparedScenario,
    state: &MPCState,
    layout: &Layout,
    horizon: usize,
) -> Result<(Vec<DeviceAgent>, Vec<Event>), CoreError> {
    let cfg = &scenario.config;
    let w = &cfg.weights;
    let grid = cfg.grid;
    let t = state.t;
    let dt = grid.dt_hours();
    let period = grid.period_steps();
    let prescient = state.mode == Mode::Prescient;
    let prev = |i: usize| -> Vec<f64> {
        state
            .prev_plan
            .as_ref()
            .map_or_else(Vec::new, |p| shifted(&p[i], horizon))
    };
    let mut events = Vec::new();
    let prox = cfg.admm.prox_settings();

    let (pv_f, load_f) = if prescient {
        (
            scenario.actual_pv(t, horizon).to_vec(),
            scenario.actual_load(t, horizon).to_vec(),
        )
    } else {
        (scenario.pv_forecast[t].clone(), scenario.load_forecast[t].clone())
    };
    let mut agents = Vec::with_capacity(layout.len());
    agents.push(DeviceAgent::Load(
        LoadAgent::new(load_f, cfg.site.beta, w.alpha_load).with_prev(prev(0), w.alpha_prev),
    ));
    agents.push(DeviceAgent::Pv(
        PvAgent::new(pv_f, w.alpha_pv).with_prev(prev(1), w.alpha_prev),
    ));
    if let (Some(i), Some(params)) = (layout.bes, scenario.bes_params()) {
        let q_final = cfg.bes.q_final_frac * cfg.bes.q_cap;
        agents.push(DeviceAgent::Storage(
            StorageAgent::new("bes", params, dt, horizon, state.q_bes)
                .with_settings(prox.clone())
                .with_terminal(Terminal::Final(q_final))
                .with_prev(prev(i), w.alpha_prev),
        ));
    }

    let now = t as i64;
    for (k, vehicle) in scenario.fleet.vehicles.iter().enumerate() {
        let list = &scenario.fleet.sessions[k];
        let estimate = if prescient {
            ongoing(list, now)
                .or_else(|| list.iter().find(|s| s.arrival > now))
                .map(|s| {
                    let observed = s.arrival <= now;
                    (
                        s.arrival,
                        s.departure,
                        if observed { state.q_ev[k] } else { s.q_init },
                        s.q_des,
                        observed,
                    )
                })
        } else {
            let last = list.iter().rev().find(|s| s.arrival <= now);
            let cutoff = day_start(now, period);
            let history: Vec<EvSession> = list.iter().filter(|s| s.departure <= cutoff).copied().collect();
            let e = estimate_ev_params(&history, None, &vehicle.params, now, period, last)?;
            let observed = e.source == EstimateSource::Observed;
            Some((
                e.t_arr,
                e.t_dep,
                if observed { state.q_ev[k] } else { e.q_init },
                e.q_des,
                observed,
            ))
        };
        let agent = match estimate {
            None => StorageAgent::new(vehicle.name.clone(), vehicle.params.clone(), dt, horizon, state.q_ev[k])
                .with_window(horizon, horizon),
            Some((arr, dep, q_init, q_des, observed)) => {
                let h = horizon as i64;
                let a = (arr - now).clamp(0, h) as usize;
                let b = (dep - now).clamp(a as i64, h) as usize;
                let terminal = if dep - now <= h {
                    Terminal::Departure(w.alpha_des * q_des)
                } else {
                    Terminal::Free
                };
                let agent = StorageAgent::new(vehicle.name.clone(), vehicle.params.clone(), dt, horizon, q_init)
                    .with_window(a, b)
                    .with_terminal(terminal);
                let relax = agent.relaxation();
                if observed && relax > 1e-6 {
                    events.push(Event::DepartureRelaxed {
                        step: t,
                        vehicle: vehicle.name.clone(),
                        kwh: relax,
                    });
                }
                agent
            }
        };
        agents.push(DeviceAgent::Storage(agent.with_settings(prox.clone()).with_prev(prev(layout.ev + k), w.alpha_prev)));
    }

    let price = scenario.price[t..t + horizon].to_vec();
    agents.push(DeviceAgent::Grid(
        GridAgent::new(price, dt, cfg.site.p_pcc_limit, w.smoothing())
            .with_settings(prox)
            .with_prev(prev(layout.grid), w.alpha_prev),
    ));
    debug_assert_eq!(agents.len(), layout.len());
    Ok((agents, events))
}

struct Plan {
    schedules: Vec<Vec<f64>>,
    objective: f64,
    iterations: usize,
    r_norm: f64,
    s_norm: f64,
    converged: bool,
    bes_next: Option<f64>,
    exchange: Option<ExchangeState>,
}

fn solve_step(
    scenario: &PreparedScenario,
    state: &MPCState,
    layout: &Layout,
    agents: &mut [DeviceAgent],
    horizon: usize,
) -> Result<Plan, CoreError> {
    let cfg = &scenario.config;
    match state.mode {
        Mode::Admm => {
            let mut settings = ExchangeSettings::scaled(agents.len(), horizon, cfg.admm.tolerance, cfg.weights.rho);
            settings.max_iter = cfg.admm.max_iter;
            settings.rho_adapt = cfg.admm.rho_adapt;
            settings.parallelism = cfg.admm.parallelism;
            let warm = state
                .prev_exchange
                .as_ref()
                .filter(|_| cfg.admm.warm_start)
                .map(|s| {
                    let schedules = s.schedules.iter().map(|p| padded(p, horizon)).collect();
                    ExchangeState::new(schedules, padded(&s.u, horizon), s.rho)
                });
            let out = run_exchange(agents, warm, &settings)?;
            let (r_norm, s_norm) = out.state.residual_history.last().copied().unwrap_or((0.0, 0.0));
            let objective = agents.iter().zip(&out.state.schedules).map(|(a, p)| a.cost(p)).sum();
            let bes_next = layout.bes.and_then(|i| match &agents[i] {
                DeviceAgent::Storage(a) => a.charge_trajectory().map(|q| q[1]),
                _ => None,
            });
            Ok(Plan {
                schedules: out.state.schedules.clone(),
                objective,
                iterations: out.iterations(),
                r_norm,
                s_norm,
                converged: out.status == ExchangeStatus::Converged,
                bes_next,
                exchange: Some(out.state),
            })
        }
        Mode::Centralized | Mode::Prescient => {
            let sol = solve_centralized(agents, &cfg.solver.central_settings())?;
            let bes_next = scenario
                .bes_params()
                .zip(layout.bes)
                .map(|(p, i)| p.next_charge(state.q_bes, sol.schedules[i][0], cfg.grid.dt_hours()));
            Ok(Plan {
                objective: sol.objective,
                iterations: sol.solution.iterations,
                r_norm: sol.solution.primal_residual,
                s_norm: sol.solution.dual_residual,
                converged: sol.status == dermpc_qp::QpStatus::Solved,
                schedules: sol.schedules,
                bes_next,
                exchange: None,
            })
        }
    }
}

const TOL: f64 = 1e-9;

/// Plans over the lookahead at `state.t`, executes the first step against
/// the realized data and advances the state.
pub fn step(state: &mut MPCState, scenario: &PreparedScenario) -> Result<(), CoreError> {
    let cfg = &scenario.config;
    let grid = cfg.grid;
    let t = state.t;
    if t >= grid.sim_steps {
        return Err(CoreError::Invalid(format!("step {t} is past the end of the simulation")));
    }
    let now = t as i64;
    let dt = grid.dt_hours();
    let horizon = grid.active_horizon(t);
    let n_ev = scenario.fleet.vehicles.len();
    let layout = Layout::new(scenario.bes_params().is_some(), n_ev);

    for (k, list) in scenario.fleet.sessions.iter().enumerate() {
        if let Some(s) = list.iter().find(|s| s.arrival == now) {
            state.q_ev[k] = s.q_init;
            *state.result.ev_charge[k].last_mut().expect("initialized") = s.q_init;
        }
    }

    let (mut agents, mut events) = build_agents(scenario, state, &layout, horizon)?;
    let plan = solve_step(scenario, state, &layout, &mut agents, horizon)?;
    if !plan.converged {
        if state.mode == Mode::Admm {
            events.push(Event::ExchangeMaxIterations {
                step: t,
                iterations: plan.iterations,
            });
        }
        log::warn!("step {t}: {} solve did not converge", state.mode);
    }

    // execution against realized data
    let actual_load = scenario.actual_load(t, 1)[0];
    let actual_pv = scenario.actual_pv(t, 1)[0];
    let load_f = agents_forecast(&agents[0]);
    let pv_f = agents_forecast(&agents[1]);
    let frac = if load_f > TOL {
        (plan.schedules[0][0] / load_f).clamp(cfg.site.beta, 1.0)
    } else {
        1.0
    };
    let mut load = frac * actual_load;
    let planned_mag = -plan.schedules[1][0];
    let mut pv = if planned_mag < -pv_f - 1e-6 {
        -(-actual_pv).min(planned_mag.max(0.0))
    } else {
        actual_pv
    };

    struct Exec {
        name: String,
        params: StorageParams,
        q: f64,
        p: f64,
    }
    let mut devices: Vec<Exec> = Vec::with_capacity(n_ev + 1);
    if let (Some(i), Some(params)) = (layout.bes, scenario.bes_params()) {
        let (p, _) = params.execute(state.q_bes, plan.schedules[i][0], dt);
        devices.push(Exec {
            name: "bes".into(),
            params,
            q: state.q_bes,
            p,
        });
    }
    let plugged: Vec<bool> = scenario
        .fleet
        .sessions
        .iter()
        .map(|list| ongoing(list, now).is_some())
        .collect();
    for (k, v) in scenario.fleet.vehicles.iter().enumerate() {
        let p = if plugged[k] {
            let mut p = plan.schedules[layout.ev + k][0];
            // in the last plugged step the charger finishes the requested
            // charge if the plan falls short of it by solver tolerance
            let leaving = scenario.fleet.sessions[k].iter().find(|s| s.departure == now + 1);
            if let Some(s) = leaving {
                let required = cfg.weights.alpha_des * s.q_des;
                let idle = v.params.eta_q * state.q_ev[k];
                if v.params.next_charge(state.q_ev[k], p, dt) < required && required > idle {
                    p = p.max((required - idle) / (v.params.eta_c * dt));
                }
            }
            v.params.execute(state.q_ev[k], p, dt).0
        } else {
            0.0
        };
        devices.push(Exec {
            name: v.name.clone(),
            params: v.params.clone(),
            q: state.q_ev[k],
            p,
        });
    }

    let limit = cfg.site.p_pcc_limit;
    let net = |load: f64, pv: f64, devices: &[Exec]| load + pv + devices.iter().map(|d| d.p).sum::<f64>();
    let requested = net(load, pv, &devices);
    if requested > limit + TOL {
        let mut excess = requested - limit;
        let cut = excess.min(load);
        if cut > 0.0 {
            load -= cut;
            excess -= cut;
            events.push(Event::EmergencyLoadCurtailment { step: t, kw: cut });
        }
        for d in devices.iter_mut() {
            if excess <= 0.0 {
                break;
            }
            if d.p > 0.0 {
                let cut = excess.min(d.p);
                d.p -= cut;
                excess -= cut;
                events.push(Event::StorageChargeReduced {
                    step: t,
                    agent: d.name.clone(),
                    kw: cut,
                });
            }
        }
    } else if requested < -limit - TOL {
        let mut deficit = -limit - requested;
        let cut = deficit.min(-pv);
        if cut > 0.0 {
            pv += cut;
            deficit -= cut;
            events.push(Event::ExtraPvCurtailment { step: t, kw: cut });
        }
        for d in devices.iter_mut() {
            if deficit <= 0.0 {
                break;
            }
            if d.p < 0.0 {
                let cut = deficit.min(-d.p);
                d.p += cut;
                deficit -= cut;
                events.push(Event::StorageDischargeReduced {
                    step: t,
                    agent: d.name.clone(),
                    kw: cut,
                });
            }
        }
    }
    let metered = net(load, pv, &devices);
    if (metered - requested).abs() > TOL {
        events.push(Event::PccViolation {
            step: t,
            requested_kw: requested,
            applied_kw: metered,
        });
    }

    // state propagation
    let res = &mut state.result;
    let mut it = devices.iter();
    if layout.bes.is_some() {
        let d = it.next().expect("bes present");
        state.q_bes = d.params.next_charge(d.q, d.p, dt);
        res.bes.push(d.p);
        res.bes_charge.push(state.q_bes);
        res.bes_planned_next.push(plan.bes_next.unwrap_or(state.q_bes));
    } else {
        res.bes.push(0.0);
        res.bes_charge.push(0.0);
        res.bes_planned_next.push(0.0);
    }
    for (k, d) in it.enumerate() {
        if plugged[k] {
            state.q_ev[k] = d.params.next_charge(d.q, d.p, dt);
        }
        res.ev[k].push(d.p);
        res.ev_charge[k].push(state.q_ev[k]);
        res.plugged[k].push(plugged[k]);
    }
    res.load.push(load);
    res.pv.push(pv);
    res.grid.push(metered);

    for (k, list) in scenario.fleet.sessions.iter().enumerate() {
        if let Some(s) = list.iter().find(|s| s.departure == now + 1) {
            let required = cfg.weights.alpha_des * s.q_des;
            let achieved = state.q_ev[k];
            res.departures.push(Departure {
                vehicle: k,
                step: t + 1,
                required,
                achieved,
            });
            if achieved < required - 1e-6 {
                events.push(Event::EvShortfall {
                    step: t + 1,
                    vehicle: scenario.fleet.vehicles[k].name.clone(),
                    kwh: required - achieved,
                });
            }
        }
    }

    if t == 0 {
        res.first_plan = plan.schedules.clone();
    }
    res.records.push(StepRecord {
        step: t,
        horizon,
        objective: plan.objective,
        iterations: plan.iterations,
        r_norm: plan.r_norm,
        s_norm: plan.s_norm,
        converged: plan.converged,
        events,
    });
    res.steps = t + 1;
    state.prev_plan = Some(plan.schedules);
    state.prev_exchange = plan.exchange;
    state.t += 1;
    Ok(())
}

fn agents_forecast(a: &DeviceAgent) -> f64 {
    match a {
        DeviceAgent::Load(l) => l.forecast()[0],
        DeviceAgent::Pv(p) => p.forecast()[0],
        _ => unreachable!("load and pv come first"),
    }
}

/// Runs the whole simulation in `mode`.
pub fn run(scenario: &PreparedScenario, mode: Mode) -> Result<SimulationResult, CoreError> {
    let mut state = MPCState::new(scenario, mode);
    for _ in 0..scenario.grid().sim_steps {
        step(&mut state, scenario)?;
    }
    Ok(state.result)
}
