//! Files written by `run` and `compare`. Every CSV is tidy: one observation
//! per row, a header naming each column, times as ISO-8601 timestamps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use dermpc::metrics::MetricsReport;
use dermpc::mpc::SimulationResult;
use dermpc::scenario::PreparedScenario;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes metrics, schedules, figure tables and the per-step trace of one run.
pub fn write_run(dir: &Path, scenario: &PreparedScenario, result: &SimulationResult, metrics: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("metrics.json"), metrics)?;

    let grid = scenario.grid();
    let n = result.steps;
    let stamp = |t: usize| grid.timestamp(t as i64).format("%Y-%m-%dT%H:%M:%S").to_string();
    let demand = scenario.actual_load(0, n);
    let available = scenario.actual_pv(0, n);
    let bes_cap = scenario.bes_params().map(|p| p.q_cap);

    let mut w = csv_writer(dir, "schedule.csv")?;
    w.write_record([
        "step",
        "timestamp",
        "price",
        "load_demand_kw",
        "load_kw",
        "pv_available_kw",
        "pv_kw",
        "bes_kw",
        "bes_kwh",
        "ev_kw",
        "grid_kw",
    ])?;
    for t in 0..n {
        w.write_record([
            t.to_string(),
            stamp(t),
            num(scenario.price[t]),
            num(demand[t]),
            num(result.load[t]),
            num(available[t]),
            num(result.pv[t]),
            num(result.bes[t]),
            num(result.bes_charge[t + 1]),
            num(result.ev_total(t)),
            num(result.grid[t]),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "ev.csv")?;
    w.write_record(["step", "timestamp", "vehicle", "plugged", "power_kw", "charge_kwh"])?;
    for (k, v) in scenario.fleet.vehicles.iter().enumerate() {
        for t in 0..n {
            w.write_record([
                t.to_string(),
                stamp(t),
                v.name.clone(),
                result.plugged[k][t].to_string(),
                num(result.ev[k][t]),
                num(result.ev_charge[k][t + 1]),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(dir, "departures.csv")?;
    w.write_record(["step", "timestamp", "vehicle", "required_kwh", "achieved_kwh"])?;
    for d in &result.departures {
        w.write_record([
            d.step.to_string(),
            stamp(d.step),
            scenario.fleet.vehicles[d.vehicle].name.clone(),
            num(d.required),
            num(d.achieved),
        ])?;
    }
    w.flush()?;

    // Figure tables.
    let mut w = csv_writer(dir, "fig_pcc.csv")?;
    w.write_record(["step", "timestamp", "grid_kw", "unoptimized_kw", "limit_kw"])?;
    for t in 0..n {
        w.write_record([
            t.to_string(),
            stamp(t),
            num(result.grid[t]),
            num(demand[t] + available[t]),
            num(scenario.config.site.p_pcc_limit),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "fig_pv_curtailment.csv")?;
    w.write_record(["step", "timestamp", "available_kw", "generated_kw", "curtailed_kw"])?;
    for t in 0..n {
        let (a, g) = (-available[t], -result.pv[t]);
        w.write_record([t.to_string(), stamp(t), num(a), num(g), num((a - g).max(0.0))])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "fig_load_curtailment.csv")?;
    w.write_record(["step", "timestamp", "demand_kw", "served_kw", "curtailed_kw"])?;
    for t in 0..n {
        w.write_record([
            t.to_string(),
            stamp(t),
            num(demand[t]),
            num(result.load[t]),
            num((demand[t] - result.load[t]).max(0.0)),
        ])?;
    }
    w.flush()?;

    let mut w = csv_writer(dir, "fig_storage.csv")?;
    w.write_record(["step", "timestamp", "device", "power_kw", "soc_percent"])?;
    if let Some(cap) = bes_cap {
        for t in 0..n {
            w.write_record([
                t.to_string(),
                stamp(t),
                "bes".to_string(),
                num(result.bes[t]),
                num(100.0 * result.bes_charge[t + 1] / cap),
            ])?;
        }
    }
    for (k, v) in scenario.fleet.vehicles.iter().enumerate() {
        for t in 0..n {
            w.write_record([
                t.to_string(),
                stamp(t),
                v.name.clone(),
                num(result.ev[k][t]),
                num(100.0 * result.ev_charge[k][t + 1] / v.params.q_cap),
            ])?;
        }
    }
    w.flush()?;

    let mut trace = create(&dir.join("trace.jsonl"))?;
    result.write_trace_jsonl(&mut trace)?;
    trace.flush()?;
    Ok(())
}
