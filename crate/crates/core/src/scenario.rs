//! Scenario files (TOML) and their resolution into simulation inputs.
//!
//! Every section has defaults describing a commercial site with 1.2 MW of
//! PV, a 3 MWh battery and twenty EVs behind a 200 kW connection, so a file
//! holding only `seed = …` is a complete scenario.

use std::path::{Path, PathBuf};

use dermpc_qp::QpSettings;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::StorageParams;
use crate::data::{read_series_csv, LoadSpec, PriceSpec, PvSpec, Series};
use crate::exchange::RhoAdapt;
use crate::fleet::{sample_fleet, EVFleetSpec, Fleet};
use crate::forecast::{forecast_magnitude, ForecastSettings, HistoryBuffer};
use crate::mpc::Mode;
use crate::types::{PenaltyWeights, TimeGrid};
use crate::CoreError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub grid: TimeGrid,
    #[serde(default)]
    pub site: SiteConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub bes: BesConfig,
    #[serde(default)]
    pub fleet: EVFleetSpec,
    #[serde(default)]
    pub weights: PenaltyWeights,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub admm: AdmmConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiteConfig {
    /// kW, both directions.
    pub p_pcc_limit: f64,
    /// Smallest fraction of demand that must be served.
    pub beta: f64,
}

impl Default for SiteConfig {
    fn default() -> Self {
        Self {
            p_pcc_limit: 200.0,
            beta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeriesSource {
    /// Drawn from the matching generator in `data.synthetic`.
    Synthetic,
    /// Relative paths resolve against the scenario file's directory.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub pv: PvSpec,
    pub load: LoadSpec,
    pub price: PriceSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub pv: SeriesSource,
    pub load: SeriesSource,
    pub price: SeriesSource,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            pv: SeriesSource::Synthetic,
            load: SeriesSource::Synthetic,
            price: SeriesSource::Synthetic,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Stationary battery. Retention is given per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BesConfig {
    pub enabled: bool,
    pub c_max: f64,
    pub d_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub eta_q: f64,
    pub q_min_frac: f64,
    pub q_max_frac: f64,
    pub q_cap: f64,
    pub q_init_frac: f64,
    /// Required charge at the end of every lookahead, as a fraction of capacity.
    pub q_final_frac: f64,
    pub throughput_cost: f64,
}

impl Default for BesConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            c_max: 500.0,
            d_max: 500.0,
            eta_c: 0.85,
            eta_d: 0.85,
            eta_q: 0.90,
            q_min_frac: 0.20,
            q_max_frac: 0.90,
            q_cap: 3000.0,
            q_init_frac: 0.5,
            q_final_frac: 0.5,
            throughput_cost: 1e-4,
        }
    }
}

impl BesConfig {
    /// Per-step battery model for `period` steps per day.
    pub fn params(&self, period: usize, alpha_cyc: f64) -> StorageParams {
        StorageParams {
            c_max: self.c_max,
            d_max: self.d_max,
            eta_c: self.eta_c,
            eta_d: self.eta_d,
            eta_q: self.eta_q.powf(1.0 / period as f64),
            q_min_frac: self.q_min_frac,
            q_max_frac: self.q_max_frac,
            q_cap: self.q_cap,
            alpha_cyc,
            throughput_cost: self.throughput_cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub history_days: usize,
    pub gamma_asym_pv: f64,
    pub gamma_asym_load: f64,
    pub gamma_curv: f64,
    pub ar_order: usize,
    pub lambda: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            history_days: 5,
            gamma_asym_pv: 9.0,
            gamma_asym_load: 1.0,
            gamma_curv: 0.5,
            ar_order: 4,
            lambda: 0.7,
        }
    }
}

impl ForecastConfig {
    pub fn pv(&self) -> ForecastSettings {
        ForecastSettings {
            gamma_asym: self.gamma_asym_pv,
            gamma_curv: self.gamma_curv,
            ar_order: self.ar_order,
            lambda: self.lambda,
        }
    }

    pub fn load(&self) -> ForecastSettings {
        ForecastSettings {
            gamma_asym: self.gamma_asym_load,
            ..self.pv()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmConfig {
    /// Residual tolerance per schedule entry (kW); scaled by `√(N·T)`.
    pub tolerance: f64,
    /// Absolute and relative tolerance of the QP solves inside each prox.
    pub prox_tolerance: f64,
    pub max_iter: usize,
    pub rho_adapt: RhoAdapt,
    pub parallelism: usize,
    pub warm_start: bool,
}

impl AdmmConfig {
    pub fn prox_settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.prox_tolerance,
            eps_rel: self.prox_tolerance,
            ..QpSettings::default()
        }
    }
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            prox_tolerance: 1e-5,
            max_iter: 5000,
            rho_adapt: RhoAdapt::None,
            parallelism: 1,
            warm_start: true,
        }
    }
}

/// Settings of the single-QP solves used by the centralized and prescient modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Absolute and relative QP tolerance.
    pub central_tolerance: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub fn central_settings(&self) -> QpSettings {
        QpSettings {
            eps_abs: self.central_tolerance,
            eps_rel: self.central_tolerance,
            max_iter: self.max_iter,
            ..QpSettings::default()
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            central_tolerance: 1e-6,
            max_iter: 50_000,
        }
    }
}

fn invalid(field: &str, constraint: impl std::fmt::Display) -> CoreError {
    CoreError::Invalid(format!("{field}: {constraint}"))
}

impl ScenarioConfig {
    /// A default scenario with the given seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            mode: Mode::default(),
            grid: TimeGrid::default(),
            site: SiteConfig::default(),
            data: DataConfig::default(),
            bes: BesConfig::default(),
            fleet: EVFleetSpec::default(),
            weights: PenaltyWeights::default(),
            forecast: ForecastConfig::default(),
            admm: AdmmConfig::default(),
            solver: SolverConfig::default(),
        }
    }

    /// Parses without touching the file system.
    pub fn from_toml_str(s: &str) -> Result<Self, CoreError> {
        let cfg: Self = toml::from_str(s).map_err(|e| CoreError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Range checks that need no file access.
    pub fn validate(&self) -> Result<(), CoreError> {
        self.grid.validate()?;
        self.weights.validate()?;
        let s = &self.site;
        if !(s.p_pcc_limit > 0.0 && s.p_pcc_limit.is_finite()) {
            return Err(invalid("site.p_pcc_limit", "must be positive"));
        }
        if !(0.0..=1.0).contains(&s.beta) {
            return Err(invalid("site.beta", "must lie in [0, 1]"));
        }
        let b = &self.bes;
        self.bes
            .params(self.grid.period_steps(), self.weights.alpha_cyc_bes)
            .validate()
            .map_err(|e| invalid("bes", e))?;
        if !(b.q_min_frac..=b.q_max_frac).contains(&b.q_init_frac) {
            return Err(invalid("bes.q_init_frac", "must lie between q_min_frac and q_max_frac"));
        }
        if !(b.q_min_frac..=b.q_max_frac).contains(&b.q_final_frac) {
            return Err(invalid("bes.q_final_frac", "must lie between q_min_frac and q_max_frac"));
        }
        self.fleet.validate()?;
        let f = &self.forecast;
        if f.history_days < 2 {
            return Err(invalid("forecast.history_days", "must be at least 2"));
        }
        if f.history_days > 366 {
            return Err(invalid("forecast.history_days", "must be at most 366"));
        }
        self.forecast.pv().validate().map_err(|e| invalid("forecast", e))?;
        if f.ar_order > 96 {
            return Err(invalid("forecast.ar_order", "must be at most 96"));
        }
        let a = &self.admm;
        if !(a.tolerance > 0.0 && a.tolerance.is_finite()) {
            return Err(invalid("admm.tolerance", "must be positive"));
        }
        if !(a.prox_tolerance > 0.0 && a.prox_tolerance.is_finite()) {
            return Err(invalid("admm.prox_tolerance", "must be positive"));
        }
        if !(self.solver.central_tolerance > 0.0 && self.solver.central_tolerance.is_finite()) {
            return Err(invalid("solver.central_tolerance", "must be positive"));
        }
        if self.solver.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be positive"));
        }
        if a.max_iter == 0 {
            return Err(invalid("admm.max_iter", "must be positive"));
        }
        if a.parallelism == 0 {
            return Err(invalid("admm.parallelism", "must be positive"));
        }
        if let RhoAdapt::ResidualBalancing { factor, ratio } = a.rho_adapt {
            if !(factor > 1.0 && ratio > 1.0) {
                return Err(invalid("admm.rho_adapt", "factor and ratio must exceed 1"));
            }
        }
        if self.grid.sim_steps > 366 * self.grid.period_steps() {
            return Err(invalid("grid.sim_steps", "must cover at most a year"));
        }
        Ok(())
    }
}

/// Reads and validates a scenario file; CSV sources must exist.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        CoreError::Invalid(m) => CoreError::Invalid(format!("{}: {m}", path.display())),
        e => e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for (field, src) in [("data.pv", &cfg.data.pv), ("data.load", &cfg.data.load), ("data.price", &cfg.data.price)] {
        if let SeriesSource::Csv { path: p } = src {
            let full = base.join(p);
            if !full.is_file() {
                return Err(invalid(field, format!("file {} does not exist", full.display())));
            }
        }
    }
    Ok(cfg)
}

/// Everything a simulation needs, resolved once and shared by all modes.
///
/// Series indexed by simulated step; `pv` and `load` also reach back over
/// the forecast history (index `k + history_steps` holds step `k`).
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub history_steps: usize,
    /// Realized generation, ≤ 0.
    pub pv: Vec<f64>,
    /// Realized demand, ≥ 0.
    pub load: Vec<f64>,
    pub price: Vec<f64>,
    pub fleet: Fleet,
    /// Forecast made at step `t` for `[t, t + active_horizon(t))`.
    pub pv_forecast: Vec<Vec<f64>>,
    pub load_forecast: Vec<Vec<f64>>,
}

impl PreparedScenario {
    pub fn prepare(config: ScenarioConfig, base_dir: &Path) -> Result<Self, CoreError> {
        config.validate()?;
        let grid = config.grid;
        let period = grid.period_steps();
        let history_steps = config.forecast.history_days * period;
        let total = history_steps + grid.sim_steps;
        let hist_origin = grid.timestamp(-(history_steps as i64));
        let step = grid.step_minutes;
        let syn = &config.data.synthetic;

        let fetch = |src: &SeriesSource, column: &str, field: &str| -> Result<Option<Series>, CoreError> {
            match src {
                SeriesSource::Synthetic => Ok(None),
                SeriesSource::Csv { path } => {
                    let s = read_series_csv(&base_dir.join(path), column)?;
                    let s = if s.step_minutes == step { Ok(s) } else { s.step_hold(step) }
                        .map_err(|e| invalid(field, e))?;
                    Ok(Some(s))
                }
            }
        };
        let pv = match fetch(&config.data.pv, "kw", "data.pv")? {
            None => syn.pv.generate(config.seed, hist_origin, step, total),
            Some(s) => s.window(hist_origin, total).map_err(|e| invalid("data.pv", e))?,
        };
        if let Some(k) = pv.iter().position(|&v| v > 0.0) {
            return Err(invalid("data.pv", format!("generation must be nonpositive, row {k} is {}", pv[k])));
        }
        let load = match fetch(&config.data.load, "kw", "data.load")? {
            None => syn.load.generate(config.seed, hist_origin, step, total),
            Some(s) => s.window(hist_origin, total).map_err(|e| invalid("data.load", e))?,
        };
        if let Some(k) = load.iter().position(|&v| v < 0.0) {
            return Err(invalid("data.load", format!("demand must be nonnegative, row {k} is {}", load[k])));
        }
        let price = match fetch(&config.data.price, "price", "data.price")? {
            None => {
                let hours = (grid.sim_steps * step as usize).div_ceil(60) + 1;
                syn.price
                    .generate_hourly(config.seed, grid.origin, hours)
                    .step_hold(step)
                    .and_then(|s| s.window(grid.origin, grid.sim_steps))
                    .map_err(|e| invalid("data.price", e))?
            }
            Some(s) => s.window(grid.origin, grid.sim_steps).map_err(|e| invalid("data.price", e))?,
        };

        let sim_days = grid.sim_steps.div_ceil(period) + 1;
        let fleet = sample_fleet(
            &config.fleet,
            config.seed,
            step,
            -(config.forecast.history_days as i64),
            config.forecast.history_days + sim_days,
            config.weights.alpha_cyc_ev,
        )?;

        let pv_settings = config.forecast.pv();
        let load_settings = config.forecast.load();
        let forecasts: Vec<(Vec<f64>, Vec<f64>)> = (0..grid.sim_steps)
            .into_par_iter()
            .map(|t| {
                let h = grid.active_horizon(t);
                let start = t as i64 - history_steps as i64;
                let pv_hist: Vec<f64> = pv[t..t + history_steps].iter().map(|v| -v).collect();
                let pv_hist = HistoryBuffer::from_values(start, &pv_hist, history_steps);
                let load_hist = HistoryBuffer::from_values(start, &load[t..t + history_steps], history_steps);
                let pv_f = forecast_magnitude(&pv_hist, &pv_settings, period, h)?;
                let load_f = forecast_magnitude(&load_hist, &load_settings, period, h)?;
                Ok((pv_f.into_iter().map(|v| -v).collect(), load_f))
            })
            .collect::<Result<_, CoreError>>()?;
        let (pv_forecast, load_forecast) = forecasts.into_iter().unzip();

        Ok(Self {
            config,
            base_dir: base_dir.to_path_buf(),
            history_steps,
            pv,
            load,
            price,
            fleet,
            pv_forecast,
            load_forecast,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.config.grid
    }

    /// Realized generation over simulated steps `[from, from + len)`.
    pub fn actual_pv(&self, from: usize, len: usize) -> &[f64] {
        &self.pv[self.history_steps + from..self.history_steps + from + len]
    }

    pub fn actual_load(&self, from: usize, len: usize) -> &[f64] {
        &self.load[self.history_steps + from..self.history_steps + from + len]
    }

    pub fn bes_params(&self) -> Option<StorageParams> {
        let c = &self.config;
        c.bes
            .enabled
            .then(|| c.bes.params(c.grid.period_steps(), c.weights.alpha_cyc_bes))
    }
}
