//! Experiment configuration: one JSON file, optionally layered on a base
//! file through an `extends` key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use race_sim::{RaceConfig, Track, TrackFile};

use crate::error::{Error, Result};
use crate::variants::Variant;

/// Deepest `extends` chain accepted; guards against cycles.
const MAX_EXTENDS_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Track file; the built-in rounded rectangle when absent. Relative
    /// paths are resolved against the config file that names them.
    pub track: Option<PathBuf>,
    pub race: RaceConfig,
    pub gp: GpConfig,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Stgp,
            seed: 0,
            out_dir: PathBuf::from("out"),
            track: None,
            race: RaceConfig::default(),
            gp: GpConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Where the inducing points go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InducingPlacement {
    LatinHypercube { count: usize, lower: Vec<f64>, upper: Vec<f64>, seed: u64 },
    Grid { counts: Vec<usize>, lower: Vec<f64>, upper: Vec<f64> },
    Points { points: Vec<Vec<f64>> },
}

/// Residual GP hyperparameters, shared by every learning variant.
///
/// Features are `(v_x, v_y, ω, a, δ)`; targets are the residuals on
/// `(v_x, v_y, ω)` divided by `output_scales`, so `signal_variance` and
/// `noise_variance` are in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub temporal_nu: f64,
    /// Matérn lengthscale in seconds.
    pub temporal_lengthscale: f64,
    pub noise_variance: Vec<f64>,
    pub output_scales: Vec<f64>,
    pub inducing: InducingPlacement,
    /// Window of most recent points kept by `exact_sod` and `spatial_ip`.
    pub sod_budget: usize,
    /// Control steps between `spatial_ip` rebuilds from its window.
    pub refit_every: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            lengthscales: vec![2.0, 1.0, 5.0, 2.0, 0.3],
            temporal_nu: 1.5,
            temporal_lengthscale: 4.0,
            // process noise (0.005, 0.005, 0.05) in scaled units
            noise_variance: vec![0.111; 3],
            output_scales: vec![0.015, 0.015, 0.15],
            inducing: InducingPlacement::LatinHypercube {
                count: 80,
                lower: vec![0.5, -1.0, -6.0, -1.0, -0.35],
                upper: vec![3.5, 1.0, 6.0, 1.0, 0.35],
                seed: 7,
            },
            sod_budget: 400,
            refit_every: 30,
        }
    }
}

/// Settings of the `bench` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub updates: usize,
    /// Leading iterations dropped from the statistics.
    pub warmup: usize,
    /// Query points per evaluation, as in one horizon.
    pub stages: usize,
    /// Also time one controller step per iteration.
    pub controller: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { updates: 10_000, warmup: 50, stages: 40, controller: false }
    }
}

impl ExperimentConfig {
    /// Reads `path`, resolving `extends` chains.
    pub fn load(path: &Path) -> Result<Self> {
        let value = load_layered(path, 0)?;
        let config: Self = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(track) = &self.track {
            if !track.is_file() {
                return Err(Error::config(format!("track file {} does not exist", track.display())));
            }
        }
        let track = self.load_track()?;
        self.race.validate(&track)?;
        self.gp.validate()?;
        if self.bench.updates <= self.bench.warmup + 10 || self.bench.stages == 0 {
            return Err(Error::config("bench needs more than warmup + 10 updates and at least one stage"));
        }
        Ok(())
    }

    pub fn load_track(&self) -> Result<Track> {
        Ok(match &self.track {
            Some(path) => Track::load(path)?,
            None => Track::from_file(&TrackFile::default())?,
        })
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let n_z = race_sim::sim::FEATURE_INDICES.len();
        let n_g = race_sim::sim::RESIDUAL_ROWS.len();
        if self.lengthscales.len() != n_z {
            return Err(Error::config(format!("expected {n_z} lengthscales, got {}", self.lengthscales.len())));
        }
        if self.noise_variance.len() != n_g || self.output_scales.len() != n_g {
            return Err(Error::config(format!("noise variances and output scales need {n_g} entries")));
        }
        if self.noise_variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("noise variances must be positive"));
        }
        if self.sod_budget == 0 || self.refit_every == 0 {
            return Err(Error::config("sod_budget and refit_every must be positive"));
        }
        let dims_ok = match &self.inducing {
            InducingPlacement::LatinHypercube { count, lower, upper, .. } => {
                *count > 0 && lower.len() == n_z && upper.len() == n_z
            }
            InducingPlacement::Grid { counts, lower, upper } => {
                counts.len() == n_z && lower.len() == n_z && upper.len() == n_z
            }
            InducingPlacement::Points { points } => !points.is_empty() && points.iter().all(|p| p.len() == n_z),
        };
        if !dims_ok {
            return Err(Error::config(format!("inducing placement must be {n_z}-dimensional and non-empty")));
        }
        Ok(())
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

fn load_layered(path: &Path, depth: usize) -> Result<Value> {
    if depth > MAX_EXTENDS_DEPTH {
        return Err(Error::config("`extends` chain is too deep (cycle?)"));
    }
    let mut value = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let Value::Object(map) = &mut value else {
        return Err(Error::config(format!("{}: top level must be an object", path.display())));
    };
    if let Some(Value::String(track)) = map.get("track") {
        let resolved = dir.join(track);
        map.insert("track".into(), Value::String(resolved.to_string_lossy().into_owned()));
    }
    match map.remove("extends") {
        None => Ok(value),
        Some(Value::String(base)) => {
            let mut merged = load_layered(&dir.join(base), depth + 1)?;
            merge(&mut merged, value);
            Ok(merged)
        }
        Some(_) => Err(Error::config("`extends` must be a path string")),
    }
}

/// Recursive object merge; `overlay` wins on conflicts, arrays are replaced.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
