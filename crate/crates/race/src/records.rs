//! Per-step simulation records, their CSV form and run summaries.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{INPUT_NAMES, N_U, N_X, STATE_NAMES};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESIDUAL_NAMES: [&str; 3] = ["vx", "vy", "omega"];
/// Wall-clock columns; everything else is deterministic given the seed.
pub const TIMING_COLUMNS: [&str; 2] = ["solve_time_s", "update_time_s"];

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    /// One-step prediction of the next state made at this step.
    pub predicted: Vec<f64>,
    /// Observed residual `y` on `(v_x, v_y, ω)`.
    pub residual: Vec<f64>,
    pub residual_mean: Vec<f64>,
    /// Predictive standard deviation of `y` (model plus process noise).
    pub residual_std: Vec<f64>,
    pub delta_0: f64,
    pub e_lat: f64,
    pub half_width: f64,
    /// Arc length driven since the start.
    pub progress: f64,
    pub laps: u32,
    pub learning: bool,
    pub soft_active: bool,
    pub qp_iterations: u32,
    pub solve_time: f64,
    pub update_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapEvent {
    pub lap: u32,
    /// Completion time (s).
    pub time: f64,
    pub lap_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub dt: f64,
    pub track_length: f64,
    pub records: Vec<StepRecord>,
    pub laps: Vec<LapEvent>,
    pub crash_time: Option<f64>,
}

/// CSV header, in order.
pub fn columns() -> Vec<String> {
    let mut c: Vec<String> = vec!["step".into(), "time".into()];
    c.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    c.extend(INPUT_NAMES.iter().map(|s| s.to_string()));
    c.extend(STATE_NAMES.iter().map(|s| format!("pred_{s}")));
    c.extend(RESIDUAL_NAMES.iter().map(|s| format!("y_{s}")));
    c.extend(RESIDUAL_NAMES.iter().map(|s| format!("g_mean_{s}")));
    c.extend(RESIDUAL_NAMES.iter().map(|s| format!("g_std_{s}")));
    for s in [
        "delta_0",
        "e_lat",
        "half_width",
        "progress",
        "laps",
        "learning",
        "soft_active",
        "qp_iterations",
    ] {
        c.push(s.into());
    }
    c.extend(TIMING_COLUMNS.iter().map(|s| s.to_string()));
    c
}

impl StepRecord {
    fn to_row(&self) -> Vec<String> {
        let f = |v: &f64| v.to_string();
        let mut row = vec![self.step.to_string(), f(&self.time)];
        for v in [&self.state, &self.input, &self.predicted, &self.residual, &self.residual_mean, &self.residual_std] {
            row.extend(v.iter().map(f));
        }
        row.extend([
            f(&self.delta_0),
            f(&self.e_lat),
            f(&self.half_width),
            f(&self.progress),
            self.laps.to_string(),
            u8::from(self.learning).to_string(),
            u8::from(self.soft_active).to_string(),
            self.qp_iterations.to_string(),
            f(&self.solve_time),
            f(&self.update_time),
        ]);
        row
    }

    fn from_row(row: &csv::StringRecord, line: usize) -> Result<Self> {
        let bad = |what: &str| Error::schema(format!("line {line}: bad {what}"));
        let num = |i: usize| -> Result<f64> { row.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad("number")) };
        let int = |i: usize| -> Result<u64> { row.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad("integer")) };
        let vec = |start: usize, n: usize| -> Result<Vec<f64>> { (start..start + n).map(num).collect() };
        let mut i = 2;
        let mut take = |n: usize| {
            let s = i;
            i += n;
            s
        };
        let (xs, us, ps, ys, ms, ss) = (take(N_X), take(N_U), take(N_X), take(3), take(3), take(3));
        let rest = take(0);
        Ok(Self {
            step: int(0)?,
            time: num(1)?,
            state: vec(xs, N_X)?,
            input: vec(us, N_U)?,
            predicted: vec(ps, N_X)?,
            residual: vec(ys, 3)?,
            residual_mean: vec(ms, 3)?,
            residual_std: vec(ss, 3)?,
            delta_0: num(rest)?,
            e_lat: num(rest + 1)?,
            half_width: num(rest + 2)?,
            progress: num(rest + 3)?,
            laps: int(rest + 4)? as u32,
            learning: int(rest + 5)? != 0,
            soft_active: int(rest + 6)? != 0,
            qp_iterations: int(rest + 7)? as u32,
            solve_time: num(rest + 8)?,
            update_time: num(rest + 9)?,
        })
    }
}

fn schema_line() -> String {
    format!("# schema_version={SCHEMA_VERSION}")
}

/// Writes the schema line, the header and one row per record.
pub fn write_csv<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "{}", schema_line())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns())?;
    for r in records {
        w.write_record(r.to_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records back, rejecting other schema versions or headers.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let first = first.trim_end();
    if first != schema_line() {
        let found = first.strip_prefix("# schema_version=").unwrap_or("missing");
        return Err(Error::schema(format!("expected schema version {SCHEMA_VERSION}, found {found}")));
    }
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != columns() {
        return Err(Error::schema("column header does not match this schema version"));
    }
    r.records().enumerate().map(|(k, row)| StepRecord::from_row(&row?, k + 3)).collect()
}

/// Run-level metrics over windows of the log.
impl SimLog {
    /// `x_{k+1} − x̂_{k+1|k}` for every step with a successor.
    pub fn prediction_errors(&self) -> Vec<(f64, Vec<f64>)> {
        self.records
            .windows(2)
            .map(|w| (w[0].time, w[1].state.iter().zip(&w[0].predicted).map(|(a, b)| a - b).collect()))
            .collect()
    }

    /// Per-state RMS prediction error over steps with `t0 ≤ t < t1`.
    pub fn rms_prediction_error(&self, t0: f64, t1: f64) -> Option<Vec<f64>> {
        rms_in_window(&self.prediction_errors(), t0, t1)
    }

    /// Fraction of residuals of `output` inside the 2σ predictive band.
    pub fn coverage_2sigma(&self, output: usize, t0: f64, t1: f64) -> Option<f64> {
        let inside: Vec<bool> = self
            .records
            .iter()
            .filter(|r| r.time >= t0 && r.time < t1)
            .map(|r| (r.residual[output] - r.residual_mean[output]).abs() <= 2.0 * r.residual_std[output])
            .collect();
        if inside.is_empty() {
            return None;
        }
        Some(inside.iter().filter(|b| **b).count() as f64 / inside.len() as f64)
    }

    /// Mean time of laps that started at or after `t0`.
    pub fn mean_lap_time(&self, t0: f64) -> Option<f64> {
        let laps: Vec<f64> = self.laps.iter().filter(|l| l.time - l.lap_time >= t0 - 1e-9).map(|l| l.lap_time).collect();
        if laps.is_empty() {
            return None;
        }
        Some(laps.iter().sum::<f64>() / laps.len() as f64)
    }

    /// Largest `|e_lat| − (w − margin)`; positive means the margin was entered.
    pub fn max_boundary_excess(&self, margin: f64) -> f64 {
        self.records.iter().map(|r| r.e_lat.abs() - (r.half_width - margin)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn margin_violations(&self, margin: f64) -> usize {
        self.records.iter().filter(|r| r.e_lat.abs() > r.half_width - margin).count()
    }
}

pub fn rms_in_window(errors: &[(f64, Vec<f64>)], t0: f64, t1: f64) -> Option<Vec<f64>> {
    let sel: Vec<&Vec<f64>> = errors.iter().filter(|(t, _)| *t >= t0 && *t < t1).map(|(_, e)| e).collect();
    let n = sel.first()?.len();
    Some((0..n).map(|i| (sel.iter().map(|e| e[i] * e[i]).sum::<f64>() / sel.len() as f64).sqrt()).collect())
}

fn mean_max(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut max) = (0usize, 0.0, 0.0f64);
    for x in v {
        n += 1;
        sum += x;
        max = max.max(x);
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceSummary {
    pub schema_version: u32,
    pub variant: String,
    pub seed: u64,
    pub simulated_time: f64,
    pub steps: usize,
    pub completed_laps: u32,
    pub laps: Vec<LapEvent>,
    /// Mean over laps after the first (standing-start) lap.
    pub mean_flying_lap_time: Option<f64>,
    pub crashed: bool,
    pub crash_time: Option<f64>,
    pub rms_prediction_error: BTreeMap<String, f64>,
    pub coverage_2sigma: BTreeMap<String, f64>,
    pub max_boundary_excess: f64,
    pub margin_violation_steps: usize,
    pub solve_time_mean: f64,
    pub solve_time_max: f64,
    pub update_time_mean: f64,
    pub update_time_max: f64,
}

impl RaceSummary {
    pub fn from_log(log: &SimLog, variant: &str, seed: u64, margin: f64) -> Self {
        let end = f64::INFINITY;
        let rms = log.rms_prediction_error(0.0, end).unwrap_or_default();
        let rms_prediction_error = STATE_NAMES.iter().zip(&rms).map(|(n, v)| (n.to_string(), *v)).collect();
        let coverage_2sigma = RESIDUAL_NAMES
            .iter()
            .enumerate()
            .filter_map(|(i, n)| log.coverage_2sigma(i, 0.0, end).map(|c| (n.to_string(), c)))
            .collect();
        let (solve_time_mean, solve_time_max) = mean_max(log.records.iter().map(|r| r.solve_time));
        let (update_time_mean, update_time_max) = mean_max(log.records.iter().map(|r| r.update_time));
        let flying: Vec<f64> = log.laps.iter().skip(1).map(|l| l.lap_time).collect();
        Self {
            schema_version: SCHEMA_VERSION,
            variant: variant.to_string(),
            seed,
            simulated_time: log.records.len() as f64 * log.dt,
            steps: log.records.len(),
            completed_laps: log.laps.len() as u32,
            laps: log.laps.clone(),
            mean_flying_lap_time: (!flying.is_empty()).then(|| flying.iter().sum::<f64>() / flying.len() as f64),
            crashed: log.crash_time.is_some(),
            crash_time: log.crash_time,
            rms_prediction_error,
            coverage_2sigma,
            max_boundary_excess: if log.records.is_empty() { 0.0 } else { log.max_boundary_excess(margin) },
            margin_violation_steps: log.margin_violations(margin),
            solve_time_mean,
            solve_time_max,
            update_time_mean,
            update_time_max,
        }
    }
}
