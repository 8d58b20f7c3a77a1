//! Time-series interchange (CSV) and synthetic data generators.
//!
//! Series files have a two-column header, `timestamp,kw` for power and
//! `timestamp,price` for prices, ISO-8601 timestamps and uniform spacing.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::CoreError;

const TIME_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];
const WRITE_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// A uniformly spaced series.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub start: NaiveDateTime,
    pub step_minutes: u32,
    pub values: Vec<f64>,
}

impl Series {
    pub fn timestamp(&self, k: usize) -> NaiveDateTime {
        self.start + chrono::Duration::minutes(k as i64 * self.step_minutes as i64)
    }

    /// Zero-order hold onto a finer grid whose step divides ours.
    pub fn step_hold(&self, step_minutes: u32) -> Result<Series, CoreError> {
        if step_minutes == 0 || self.step_minutes % step_minutes != 0 {
            return Err(CoreError::Data(format!(
                "cannot resample a {}-minute series onto {}-minute steps",
                self.step_minutes, step_minutes
            )));
        }
        let rep = (self.step_minutes / step_minutes) as usize;
        Ok(Series {
            start: self.start,
            step_minutes,
            values: self.values.iter().flat_map(|&v| std::iter::repeat_n(v, rep)).collect(),
        })
    }

    /// `len` values starting at `from`, which must lie on our grid.
    pub fn window(&self, from: NaiveDateTime, len: usize) -> Result<Vec<f64>, CoreError> {
        let offset = (from - self.start).num_minutes();
        let step = self.step_minutes as i64;
        if offset < 0 || offset % step != 0 || (from - self.start).num_seconds() % 60 != 0 {
            return Err(CoreError::Data(format!(
                "series starting {} does not cover {from} on its {step}-minute grid",
                self.start
            )));
        }
        let first = (offset / step) as usize;
        if first + len > self.values.len() {
            return Err(CoreError::Data(format!(
                "series ends at {} but {len} steps from {from} are needed",
                self.timestamp(self.values.len())
            )));
        }
        Ok(self.values[first..first + len].to_vec())
    }
}

/// Parses a series whose value column is named `column`.
pub fn parse_series_csv<R: Read>(input: R, column: &str) -> Result<Series, CoreError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| CoreError::Data(format!("bad header: {e}")))?;
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != column {
        return Err(CoreError::Data(format!(
            "expected header `timestamp,{column}`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut stamps = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CoreError::Data(format!("line {line}: {e}")))?;
        if rec.len() != 2 {
            return Err(CoreError::Data(format!("line {line}: expected 2 fields")));
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| CoreError::Data(format!("line {line}: bad timestamp `{}`", &rec[0])))?;
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| CoreError::Data(format!("line {line}: bad value `{}`", &rec[1])))?;
        if !v.is_finite() {
            return Err(CoreError::Data(format!("line {line}: value is not finite")));
        }
        stamps.push(ts);
        values.push(v);
    }
    if stamps.len() < 2 {
        return Err(CoreError::Data("a series needs at least two rows".into()));
    }
    let step = stamps[1] - stamps[0];
    if step <= chrono::Duration::zero() || step.num_seconds() % 60 != 0 {
        return Err(CoreError::Data(format!(
            "spacing must be a positive whole number of minutes, got {step}"
        )));
    }
    for (i, w) in stamps.windows(2).enumerate() {
        if w[1] - w[0] != step {
            return Err(CoreError::Data(format!(
                "line {}: spacing {} differs from {}",
                i + 3,
                w[1] - w[0],
                step
            )));
        }
    }
    let step_minutes = u32::try_from(step.num_minutes()).map_err(|_| CoreError::Data("spacing too large".into()))?;
    Ok(Series {
        start: stamps[0],
        step_minutes,
        values,
    })
}

pub fn read_series_csv(path: &Path, column: &str) -> Result<Series, CoreError> {
    let file = std::fs::File::open(path).map_err(|source| CoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_series_csv(std::io::BufReader::new(file), column).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))
}

pub fn write_series_csv<W: Write>(series: &Series, column: &str, out: W) -> Result<(), CoreError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CoreError::Data(e.to_string());
    w.write_record(["timestamp", column]).map_err(io)?;
    for (k, v) in series.values.iter().enumerate() {
        w.write_record([series.timestamp(k).format(WRITE_FORMAT).to_string(), v.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CoreError::Data(e.to_string()))
}

/// Clear-sky diurnal generation with multiplicative noise and passing clouds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvSpec {
    pub peak_kw: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Standard deviation of the multiplicative noise.
    pub noise: f64,
    pub clouds_per_day: f64,
    /// Largest fractional drop during a cloud.
    pub cloud_depth: f64,
    pub cloud_minutes: f64,
}

impl Default for PvSpec {
    fn default() -> Self {
        Self {
            peak_kw: 1200.0,
            sunrise_hour: 6.0,
            sunset_hour: 20.0,
            noise: 0.02,
            clouds_per_day: 1.0,
            cloud_depth: 0.3,
            cloud_minutes: 40.0,
        }
    }
}

/// Commercial load: a base level with a morning and an afternoon hump and
/// AR(1) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSpec {
    pub base_kw: f64,
    pub morning_kw: f64,
    pub morning_hour: f64,
    pub afternoon_kw: f64,
    pub afternoon_hour: f64,
    /// Width (standard deviation) of each hump.
    pub hump_hours: f64,
    pub noise_kw: f64,
    pub noise_ar: f64,
}

impl Default for LoadSpec {
    fn default() -> Self {
        Self {
            base_kw: 140.0,
            morning_kw: 300.0,
            morning_hour: 10.0,
            afternoon_kw: 250.0,
            afternoon_hour: 15.5,
            hump_hours: 2.5,
            noise_kw: 10.0,
            noise_ar: 0.5,
        }
    }
}

/// Hourly day-ahead price shaped like a solar-heavy market: a morning
/// shoulder, a midday trough and an evening peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceSpec {
    /// $/kWh.
    pub base: f64,
    pub morning: f64,
    pub midday_dip: f64,
    pub evening: f64,
    pub noise: f64,
}

impl Default for PriceSpec {
    fn default() -> Self {
        Self {
            base: 0.045,
            morning: 0.015,
            midday_dip: 0.03,
            evening: 0.06,
            noise: 0.003,
        }
    }
}

fn bump(hour: f64, centre: f64, width: f64) -> f64 {
    // distance on the 24 h circle
    let mut d = (hour - centre).rem_euclid(24.0);
    if d > 12.0 {
        d -= 24.0;
    }
    (-0.5 * (d / width).powi(2)).exp()
}

fn hour_of(t: NaiveDateTime) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl PvSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = self.peak_kw >= 0.0
            && 0.0 <= self.sunrise_hour
            && self.sunrise_hour < self.sunset_hour
            && self.sunset_hour <= 24.0
            && self.noise >= 0.0
            && self.clouds_per_day >= 0.0
            && (0.0..=1.0).contains(&self.cloud_depth)
            && self.cloud_minutes > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Invalid(format!("pv generator parameters out of range: {self:?}")))
        }
    }

    /// Signed generation (≤ 0) for `n` steps from `start`.
    pub fn generate(&self, seed: u64, start: NaiveDateTime, step_minutes: u32, n: usize) -> Vec<f64> {
        let mut rng = stream(seed, 1);
        let step_h = step_minutes as f64 / 60.0;
        let day_len = self.sunset_hour - self.sunrise_hour;
        let noise = Normal::new(0.0, self.noise.max(1e-300)).expect("finite");
        // cloud centres in hours since start, with their depths
        let days = (n as f64 * step_h / 24.0).ceil() as usize + 1;
        let mut clouds: Vec<(f64, f64)> = Vec::new();
        let start_h = hour_of(start);
        if self.clouds_per_day > 0.0 {
            let count = Poisson::new(self.clouds_per_day).expect("positive rate");
            for d in 0..days {
                let k: f64 = count.sample(&mut rng);
                for _ in 0..k as usize {
                    let at = d as f64 * 24.0 + rng.random_range(self.sunrise_hour..self.sunset_hour) - start_h;
                    let depth = self.cloud_depth * rng.random_range(0.3..1.0);
                    clouds.push((at, depth));
                }
            }
        }
        let width = self.cloud_minutes / 60.0 / 2.0;
        (0..n)
            .map(|k| {
                let t = start + chrono::Duration::minutes(k as i64 * step_minutes as i64);
                let h = hour_of(t);
                let elapsed = k as f64 * step_h;
                let x = (h - self.sunrise_hour) / day_len;
                let clear = if (0.0..=1.0).contains(&x) {
                    self.peak_kw * (std::f64::consts::PI * x).sin().powf(1.5)
                } else {
                    0.0
                };
                let shade: f64 = clouds
                    .iter()
                    .map(|&(at, depth)| 1.0 - depth * (-0.5 * ((elapsed - at) / width).powi(2)).exp())
                    .product();
                let e: f64 = noise.sample(&mut rng);
                -(clear * shade * (1.0 + e)).clamp(0.0, self.peak_kw)
            })
            .collect()
    }
}

impl LoadSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        let ok = self.base_kw >= 0.0
            && self.morning_kw >= 0.0
            && self.afternoon_kw >= 0.0
            && self.hump_hours > 0.0
            && self.noise_kw >= 0.0
            && self.noise_ar.abs() < 1.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Invalid(format!("load generator parameters out of range: {self:?}")))
        }
    }

    /// Demand (≥ 0) for `n` steps from `start`.
    pub fn generate(&self, seed: u64, start: NaiveDateTime, step_minutes: u32, n: usize) -> Vec<f64> {
        let mut rng = stream(seed, 2);
        let innovation = Normal::new(0.0, self.noise_kw * (1.0 - self.noise_ar.powi(2)).sqrt() + 1e-300).expect("finite");
        let mut e = 0.0;
        (0..n)
            .map(|k| {
                let h = hour_of(start + chrono::Duration::minutes(k as i64 * step_minutes as i64));
                e = self.noise_ar * e + innovation.sample(&mut rng);
                let shape = self.base_kw
                    + self.morning_kw * bump(h, self.morning_hour, self.hump_hours)
                    + self.afternoon_kw * bump(h, self.afternoon_hour, self.hump_hours);
                (shape + e).max(0.0)
            })
            .collect()
    }
}

impl PriceSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if [self.base, self.morning, self.midday_dip, self.evening, self.noise]
            .iter()
            .all(|v| v.is_finite())
            && self.noise >= 0.0
        {
            Ok(())
        } else {
            Err(CoreError::Invalid(format!("price generator parameters out of range: {self:?}")))
        }
    }

    /// Hourly prices for `hours` hours from `start` (truncated to the hour).
    pub fn generate_hourly(&self, seed: u64, start: NaiveDateTime, hours: usize) -> Series {
        let mut rng = stream(seed, 3);
        let noise = Normal::new(0.0, self.noise.max(1e-300)).expect("finite");
        let start = start.with_minute(0).and_then(|t| t.with_second(0)).expect("valid time");
        let values = (0..hours)
            .map(|k| {
                let h = hour_of(start + chrono::Duration::hours(k as i64)) + 0.5;
                let e: f64 = noise.sample(&mut rng);
                self.base + self.morning * bump(h, 8.0, 1.5) - self.midday_dip * bump(h, 13.0, 2.5)
                    + self.evening * bump(h, 19.5, 1.5)
                    + e
            })
            .collect();
        Series {
            start,
            step_minutes: 60,
            values,
        }
    }
}

/// Input of the `gen-data` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataSpec {
    pub seed: u64,
    pub origin: NaiveDateTime,
    pub days: usize,
    #[serde(default = "default_step")]
    pub step_minutes: u32,
    #[serde(default)]
    pub pv: PvSpec,
    #[serde(default)]
    pub load: LoadSpec,
    #[serde(default)]
    pub price: PriceSpec,
}

fn default_step() -> u32 {
    15
}

/// The three series produced by [`GenDataSpec::generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub pv: Series,
    pub load: Series,
    pub price: Series,
}

impl GenDataSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, CoreError> {
        let spec: Self = toml::from_str(s).map_err(|e| CoreError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.days == 0 || self.days > 3660 {
            return Err(CoreError::Invalid(format!("days must lie in 1..=3660, got {}", self.days)));
        }
        if self.step_minutes == 0 || 60 % self.step_minutes != 0 {
            return Err(CoreError::Invalid(format!(
                "step_minutes must divide an hour, got {}",
                self.step_minutes
            )));
        }
        if self.origin.minute() != 0 || self.origin.second() != 0 {
            return Err(CoreError::Invalid("origin must fall on a whole hour".into()));
        }
        self.pv.validate()?;
        self.load.validate()?;
        self.price.validate()
    }

    pub fn generate(&self) -> GeneratedData {
        let n = self.days * 24 * 60 / self.step_minutes as usize;
        let pv = Series {
            start: self.origin,
            step_minutes: self.step_minutes,
            values: self.pv.generate(self.seed, self.origin, self.step_minutes, n),
        };
        let load = Series {
            start: self.origin,
            step_minutes: self.step_minutes,
            values: self.load.generate(self.seed, self.origin, self.step_minutes, n),
        };
        let price = self.price.generate_hourly(self.seed, self.origin, self.days * 24);
        GeneratedData { pv, load, price }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> NaiveDateTime {
        parse_timestamp("2024-06-01T00:00:00").unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let s = Series {
            start: t0(),
            step_minutes: 15,
            values: vec![1.5, -2.0, 0.0],
        };
        let mut buf = Vec::new();
        write_series_csv(&s, "kw", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,kw\n2024-06-01T00:00:00,1.5\n"));
        assert_eq!(parse_series_csv(&buf[..], "kw").unwrap(), s);
    }

    #[test]
    fn csv_rejects_gaps_and_headers() {
        let gap = "timestamp,kw\n2024-06-01T00:00,1\n2024-06-01T00:15,1\n2024-06-01T00:45,1\n";
        assert!(parse_series_csv(gap.as_bytes(), "kw").unwrap_err().to_string().contains("spacing"));
        let hdr = "time,kw\n2024-06-01T00:00,1\n2024-06-01T00:15,1\n";
        assert!(parse_series_csv(hdr.as_bytes(), "kw").is_err());
        let nan = "timestamp,kw\n2024-06-01T00:00,NaN\n2024-06-01T00:15,1\n";
        assert!(parse_series_csv(nan.as_bytes(), "kw").is_err());
    }

    #[test]
    fn hourly_prices_are_held() {
        let s = Series {
            start: t0(),
            step_minutes: 60,
            values: vec![0.1, 0.2],
        };
        let q = s.step_hold(15).unwrap();
        assert_eq!(q.values, vec![0.1, 0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2]);
        assert!(s.step_hold(25).is_err());
        let w = q.window(t0() + chrono::Duration::minutes(45), 2).unwrap();
        assert_eq!(w, vec![0.1, 0.2]);
        assert!(q.window(t0() + chrono::Duration::minutes(10), 1).is_err());
        assert!(q.window(t0(), 9).is_err());
    }

    #[test]
    fn generators_are_deterministic_and_signed() {
        let spec = GenDataSpec {
            seed: 4,
            origin: t0(),
            days: 2,
            step_minutes: 15,
            pv: PvSpec::default(),
            load: LoadSpec::default(),
            price: PriceSpec::default(),
        };
        let a = spec.generate();
        assert_eq!(a, spec.generate());
        assert_eq!(a.pv.values.len(), 192);
        assert_eq!(a.price.values.len(), 48);
        assert!(a.pv.values.iter().all(|&v| v <= 0.0 && v >= -1200.0));
        assert!(a.load.values.iter().all(|&v| v >= 0.0));
        // night is dark
        assert_eq!(a.pv.values[8], 0.0);
        assert!(a.pv.values[52] < -500.0);
    }
}
