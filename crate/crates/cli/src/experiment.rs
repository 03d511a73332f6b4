//! Closed-loop runs and offline re-scoring of their logs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use race_sim::records::RESIDUAL_NAMES;
use race_sim::{read_csv, run_closed_loop, write_csv, RaceSummary, SimLog, StepRecord};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::variants::{build_model, Variant};

pub const LOG_FILE: &str = "log.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPLAY_FILE: &str = "replay.json";

/// Runs `config.variant` on the configured track. A crash ends the run
/// early and is recorded in the log, not reported as an error.
pub fn run_race(config: &ExperimentConfig) -> Result<(SimLog, RaceSummary)> {
    let track = config.load_track()?;
    let mut model = build_model(config.variant, &config.gp, config.race.controller.dt, None)?;
    let log = run_closed_loop(&config.race, &track, model.as_mut(), config.variant.loop_mode(), config.seed)?;
    let summary = RaceSummary::from_log(&log, config.variant.name(), config.seed, config.race.controller.margin);
    Ok((log, summary))
}

/// Writes `log.csv` and `summary.json` into `dir`.
pub fn write_race(dir: &Path, log: &SimLog, summary: &RaceSummary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LOG_FILE);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_csv(&log.records, BufWriter::new(file))?;
    write_json(&dir.join(SUMMARY_FILE), summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(read_csv(BufReader::new(file))?)
}

/// Residual-prediction quality of a freshly built model on a logged stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub schema_version: u32,
    pub log: PathBuf,
    pub variant: String,
    /// Scoring window start; earlier steps still train the model.
    pub from_time: f64,
    pub steps_scored: usize,
    pub observations: u64,
    /// RMS of `y − E[g]` per residual output.
    pub rms_prediction_error: BTreeMap<String, f64>,
    /// RMS of the raw residual `y` per output.
    pub residual_rms: BTreeMap<String, f64>,
    pub coverage_2sigma: BTreeMap<String, f64>,
}

/// Feeds the logged residuals through a new `variant` model, learning only
/// on the steps where the original run learned.
pub fn replay(
    records: &[StepRecord],
    config: &ExperimentConfig,
    variant: Variant,
    from_time: f64,
    log: PathBuf,
) -> Result<ReplayReport> {
    let mut model = build_model(variant, &config.gp, config.race.controller.dt, None)?;
    let n_g = RESIDUAL_NAMES.len();
    let noise_var: Vec<f64> = config.race.process_noise_std.iter().map(|s| s * s).collect();
    let (mut sq_err, mut sq_res, mut inside) = (vec![0.0; n_g], vec![0.0; n_g], vec![0usize; n_g]);
    let mut scored = 0usize;
    for r in records {
        let x = DVector::from_column_slice(&r.state);
        let u = DVector::from_column_slice(&r.input);
        let y = DVector::from_column_slice(&r.residual);
        if y.len() != n_g {
            return Err(Error::config(format!("log rows must carry {n_g} residuals")));
        }
        if r.time >= from_time {
            let eval = model.evaluate_stages(std::slice::from_ref(&x), std::slice::from_ref(&u))?;
            let g = &eval[0];
            for i in 0..n_g {
                let e = y[i] - g.mean[i];
                let std = (g.variance[(i, i)].max(0.0) + noise_var[i]).sqrt();
                sq_err[i] += e * e;
                sq_res[i] += y[i] * y[i];
                inside[i] += usize::from(e.abs() <= 2.0 * std);
            }
            scored += 1;
        }
        model.advance(r.learning.then_some((&x, &u, &y)))?;
    }
    if scored == 0 {
        return Err(Error::Validation(format!("no logged steps at or after t = {from_time}")));
    }
    let n = scored as f64;
    let per_output = |v: &[f64]| -> BTreeMap<String, f64> {
        RESIDUAL_NAMES.iter().zip(v).map(|(k, v)| (k.to_string(), *v)).collect()
    };
    Ok(ReplayReport {
        schema_version: race_sim::records::SCHEMA_VERSION,
        log,
        variant: variant.name().to_string(),
        from_time,
        steps_scored: scored,
        observations: model.count(),
        rms_prediction_error: per_output(&sq_err.iter().map(|s| (s / n).sqrt()).collect::<Vec<_>>()),
        residual_rms: per_output(&sq_res.iter().map(|s| (s / n).sqrt()).collect::<Vec<_>>()),
        coverage_2sigma: per_output(&inside.iter().map(|c| *c as f64 / n).collect::<Vec<_>>()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(variant: Variant, duration: f64) -> ExperimentConfig {
        let mut c = ExperimentConfig { variant, ..ExperimentConfig::default() };
        c.race.duration = duration;
        c
    }

    #[test]
    fn short_race_has_no_laps_and_writes_files() {
        let config = short(Variant::Nominal, 1.0);
        let (log, summary) = run_race(&config).unwrap();
        assert_eq!(summary.completed_laps, 0);
        assert!(!summary.crashed);
        let dir = tempfile::tempdir().unwrap();
        write_race(dir.path(), &log, &summary).unwrap();
        assert_eq!(read_log(&dir.path().join(LOG_FILE)).unwrap(), log.records);
        let text = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(serde_json::from_str::<RaceSummary>(&text).unwrap(), summary);
    }

    #[test]
    fn zero_model_replay_reports_raw_residuals() {
        let config = short(Variant::Nominal, 2.0);
        let (log, _) = run_race(&config).unwrap();
        let report = replay(&log.records, &config, Variant::Nominal, 0.0, "mem".into()).unwrap();
        for k in RESIDUAL_NAMES {
            assert_eq!(report.rms_prediction_error[k], report.residual_rms[k]);
        }
        assert_eq!(report.observations, 0);
    }

    #[test]
    fn replay_reproduces_the_generating_model() {
        let mut config = short(Variant::Stgp, 6.0);
        config.race.learning_after_laps = 0;
        let (log, _) = run_race(&config).unwrap();
        let report = replay(&log.records, &config, Variant::Stgp, 0.0, "mem".into()).unwrap();
        let n = log.records.len() as f64;
        for (i, k) in RESIDUAL_NAMES.iter().enumerate() {
            let logged =
                (log.records.iter().map(|r| (r.residual[i] - r.residual_mean[i]).powi(2)).sum::<f64>() / n).sqrt();
            assert!((report.rms_prediction_error[*k] - logged).abs() <= 1e-12, "{k}");
        }
        assert!(report.observations > 0);
    }
}
