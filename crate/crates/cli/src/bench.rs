//! Timing of online updates and horizon evaluations against the number of
//! absorbed observations.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use stgp_mpc::{sqp_rti_step, InteriorPoint, OcpIterate, OcpSpec, OnlineModel, RtiOptions};

use race_sim::sim::initial_state;
use race_sim::vehicle::{N_U, N_X, OMEGA, STEER, TORQUE, U_PROGRESS, VX, VY};
use race_sim::{RaceConfig, RaceOcp};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::variants::{build_model, Variant};

pub const SCHEMA_VERSION: u32 = 1;

/// One timed iteration. Times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub iteration: usize,
    /// Observations absorbed after this iteration's update.
    pub count: u64,
    pub update_s: f64,
    pub evaluate_s: f64,
    /// Zero unless controller timing is enabled.
    pub solve_s: f64,
    pub total_s: f64,
}

pub const BENCH_COLUMNS: [&str; 6] = ["iteration", "count", "update_s", "evaluate_s", "solve_s", "total_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub schema_version: u32,
    pub variant: String,
    pub updates: usize,
    pub warmup: usize,
    pub stages: usize,
    /// Window size for windowed variants, `None` when uncapped.
    pub sod_budget: Option<usize>,
    /// Mean `total_s` of each tenth of the post-warm-up iterations.
    pub decile_means_s: Vec<f64>,
    pub last_first_decile_ratio: f64,
    /// Least-squares slope of `total_s` against `count`.
    pub slope_s_per_point: f64,
    /// One-sided p-value for a positive slope.
    pub slope_p_value: f64,
    /// Last-decile mean over the mean of the first tenth of iterations
    /// after the window filled; windowed variants only.
    pub plateau_ratio: Option<f64>,
    pub mean_total_s: f64,
    pub max_total_s: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: BenchSummary,
}

/// Streams synthetic residual data through `variant`.
///
/// `sod_budget` overrides the configured window; `Some(updates)` makes the
/// exact GP effectively uncapped.
pub fn run_bench(config: &ExperimentConfig, variant: Variant, sod_budget: Option<usize>) -> Result<BenchReport> {
    let b = &config.bench;
    let dt = config.race.controller.dt;
    let mut model = build_model(variant, &config.gp, dt, sod_budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::config(e.to_string()))?;
    let scales = &config.gp.output_scales;
    let mut controller = match b.controller {
        true => Some(ControllerBench::new(config)?),
        false => None,
    };

    let mut rows = Vec::with_capacity(b.updates);
    for iteration in 0..b.updates {
        let (x, u) = random_point(&mut rng);
        let y = DVector::from_fn(scales.len(), |i, _| {
            scales[i] * (synthetic_residual(&x, i) + 0.3 * noise.sample(&mut rng))
        });
        let (xs, us): (Vec<_>, Vec<_>) = (0..b.stages).map(|_| random_point(&mut rng)).unzip();

        let tic = Instant::now();
        model.advance(Some((&x, &u, &y)))?;
        let update_s = tic.elapsed().as_secs_f64();
        let tic = Instant::now();
        let eval = model.evaluate_stages(&xs, &us)?;
        let evaluate_s = tic.elapsed().as_secs_f64();
        debug_assert_eq!(eval.len(), b.stages);
        let solve_s = match controller.as_mut() {
            Some(c) => c.step(model.as_ref())?,
            None => 0.0,
        };
        rows.push(BenchRow {
            iteration,
            count: model.count(),
            update_s,
            evaluate_s,
            solve_s,
            total_s: update_s + evaluate_s + solve_s,
        });
    }

    let windowed = matches!(variant, Variant::ExactSod | Variant::SpatialIp);
    let budget = windowed.then(|| sod_budget.unwrap_or(config.gp.sod_budget));
    let summary = summarize(&rows, variant, b.warmup, b.stages, budget)?;
    Ok(BenchReport { rows, summary })
}

/// A state and input inside the feature box the default inducing points cover.
fn random_point(rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
    let mut x = DVector::zeros(N_X);
    x[VX] = rng.random_range(0.5..3.5);
    x[VY] = rng.random_range(-0.5..0.5);
    x[OMEGA] = rng.random_range(-5.0..5.0);
    x[TORQUE] = rng.random_range(-0.5..0.5);
    x[STEER] = rng.random_range(-0.3..0.3);
    let mut u = DVector::zeros(N_U);
    u[U_PROGRESS] = x[VX];
    (x, u)
}

/// Smooth residual in units of the output scale.
fn synthetic_residual(x: &DVector<f64>, output: usize) -> f64 {
    match output {
        0 => 0.5 * x[TORQUE] - 0.2 * x[VX],
        1 => (2.0 * x[STEER]).sin() * x[VX],
        _ => 5.0 * x[STEER] * x[VX] / 3.5,
    }
}

fn summarize(rows: &[BenchRow], variant: Variant, warmup: usize, stages: usize, budget: Option<usize>) -> Result<BenchSummary> {
    let kept = rows.get(warmup..).filter(|r| r.len() >= 10).ok_or_else(|| {
        Error::config(format!("bench needs at least {} updates for a decile summary", warmup + 10))
    })?;
    let total: Vec<f64> = kept.iter().map(|r| r.total_s).collect();
    let decile_means_s: Vec<f64> = (0..10)
        .map(|d| {
            let (a, b) = (d * total.len() / 10, (d + 1) * total.len() / 10);
            mean(&total[a..b])
        })
        .collect();
    let counts: Vec<f64> = kept.iter().map(|r| r.count as f64).collect();
    let (slope, p) = slope_test(&counts, &total);
    let plateau_ratio = budget.and_then(|n| {
        let after: Vec<f64> = kept.iter().filter(|r| r.count as usize > n).map(|r| r.total_s).collect();
        (after.len() >= 10).then(|| mean(&after[after.len() * 9 / 10..]) / mean(&after[..after.len() / 10]))
    });
    Ok(BenchSummary {
        schema_version: SCHEMA_VERSION,
        variant: variant.name().to_string(),
        updates: rows.len(),
        warmup,
        stages,
        sod_budget: budget,
        last_first_decile_ratio: decile_means_s[9] / decile_means_s[0],
        decile_means_s,
        slope_s_per_point: slope,
        slope_p_value: p,
        plateau_ratio,
        mean_total_s: mean(&total),
        max_total_s: total.iter().cloned().fold(0.0, f64::max),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// OLS slope of `y` on `x` and the one-sided p-value of `slope > 0`.
pub fn slope_test(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if n < 3.0 || sxx == 0.0 {
        return (0.0, 1.0);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    if se == 0.0 {
        return (slope, if slope > 0.0 { 0.0 } else { 1.0 });
    }
    let t = StudentsT::new(0.0, 1.0, n - 2.0).expect("positive degrees of freedom");
    (slope, 1.0 - t.cdf(slope / se))
}

/// One warm-started controller step per iteration at a fixed state.
struct ControllerBench {
    ocp: RaceOcp,
    spec: OcpSpec,
    x0: DVector<f64>,
    iterate: OcpIterate,
}

impl ControllerBench {
    fn new(config: &ExperimentConfig) -> Result<Self> {
        let track = config.load_track()?;
        let cc = config.race.controller.clone();
        let ocp = RaceOcp::new(config.race.vehicle.clone(), track.clone(), cc.clone())?;
        let spec = OcpSpec {
            horizon: cc.horizon,
            dt: cc.dt,
            b_residual: RaceConfig::residual_map(),
            sigma_w: config.race.process_noise_covariance(),
            slack_penalty: cc.slack_penalty,
            regularization: cc.regularization,
            tighten: true,
        };
        let x0 = initial_state(&track, 1.5);
        let mut u = DVector::zeros(N_U);
        u[U_PROGRESS] = 1.5;
        let iterate = OcpIterate::rollout(&ocp, &x0, vec![u; cc.horizon]);
        Ok(Self { ocp, spec, x0, iterate })
    }

    fn step(&mut self, model: &dyn OnlineModel) -> Result<f64> {
        let tic = Instant::now();
        sqp_rti_step(&mut self.iterate, &self.ocp, model, &InteriorPoint::default(), &self.spec, &self.x0, RtiOptions {
            shift: false,
        })?;
        Ok(tic.elapsed().as_secs_f64())
    }
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], mut out: W) -> Result<()> {
    writeln!(out, "# schema_version={SCHEMA_VERSION}").map_err(|e| Error::io(std::path::Path::new("<bench csv>"), e))?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(std::path::Path::new("<bench csv>"), e))?;
    Ok(())
}
