//! Closed-loop simulation: plant, controller and online learning.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use stgp_mpc::{
    rk4_next, sqp_rti_step, InteriorPoint, OcpIterate, OcpSpec, OnlineModel, RtiOptions, StepStatus,
};

use crate::error::{Error, Result};
use crate::records::{LapEvent, SimLog, StepRecord};
use crate::mpcc::{ControllerConfig, RaceOcp};
use crate::perturbation::PerturbationSchedule;
use crate::track::Track;
use crate::vehicle::{Bicycle, VehicleParams, N_U, N_X, OMEGA, PHI, THETA, U_PROGRESS, VX, VY, XP, YP};

/// State rows driven by the residual `g`.
pub const RESIDUAL_ROWS: [usize; 3] = [VX, VY, OMEGA];
/// GP features `(v_x, v_y, ω, a, δ)` as indices into `[x; u]`.
pub const FEATURE_INDICES: [usize; 5] = [3, 4, 5, 6, 7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaceConfig {
    pub vehicle: VehicleParams,
    pub controller: ControllerConfig,
    pub perturbation: PerturbationSchedule,
    /// Plant RK4 substeps per control period.
    pub plant_substeps: usize,
    /// Standard deviations of the per-step noise on `(v_x, v_y, ω)`.
    pub process_noise_std: [f64; 3],
    pub duration: f64,
    /// Distance beyond the track edge at which the run is declared crashed.
    pub crash_band: f64,
    /// Online learning starts after this many completed laps.
    pub learning_after_laps: u32,
    pub initial_speed: f64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            controller: ControllerConfig::default(),
            perturbation: PerturbationSchedule::default(),
            plant_substeps: 4,
            process_noise_std: [0.005, 0.005, 0.05],
            duration: 90.0,
            crash_band: 0.1,
            learning_after_laps: 1,
            initial_speed: 0.0,
        }
    }
}

impl RaceConfig {
    pub fn validate(&self, track: &Track) -> Result<()> {
        self.vehicle.validate()?;
        self.controller.validate(track)?;
        self.perturbation.validate(self.vehicle.steer_max)?;
        if self.plant_substeps == 0 {
            return Err(Error::config("plant substeps must be positive"));
        }
        if self.process_noise_std.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("process noise deviations must be finite and nonnegative"));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() || !(self.crash_band >= 0.0) {
            return Err(Error::config("duration and crash band must be finite and nonnegative"));
        }
        if !(self.initial_speed >= 0.0) {
            return Err(Error::config("initial speed must be nonnegative"));
        }
        Ok(())
    }

    /// Number of control steps in `duration`.
    pub fn steps(&self) -> usize {
        (self.duration / self.controller.dt + 1e-9).floor() as usize
    }

    /// `B`: selects the residual rows of the state.
    pub fn residual_map() -> DMatrix<f64> {
        let mut b = DMatrix::zeros(N_X, RESIDUAL_ROWS.len());
        for (g, row) in RESIDUAL_ROWS.iter().enumerate() {
            b[(*row, g)] = 1.0;
        }
        b
    }

    /// `Σ_w` on the full state.
    pub fn process_noise_covariance(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(N_X, N_X);
        for (k, row) in RESIDUAL_ROWS.iter().enumerate() {
            s[(*row, *row)] = self.process_noise_std[k].powi(2);
        }
        s
    }
}

/// How the residual model is used in the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopMode {
    /// Feed residual observations to the model once learning is active.
    pub learning: bool,
    /// Tighten boundary rows with the propagated covariance.
    pub tighten: bool,
}

impl LoopMode {
    pub const NOMINAL: Self = Self { learning: false, tighten: false };
    pub const LEARNING: Self = Self { learning: true, tighten: true };
}

/// `y = B⁺ (x⁺ − f(x, u))` on the residual rows.
pub fn extract_residual(x_next: &DVector<f64>, nominal_next: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(RESIDUAL_ROWS.len(), RESIDUAL_ROWS.iter().map(|r| x_next[*r] - nominal_next[*r]))
}

/// Start of the track, at rest unless `initial_speed` is set.
pub fn initial_state(track: &Track, speed: f64) -> DVector<f64> {
    let pose = track.pose(0.0);
    let mut x = DVector::zeros(N_X);
    x[XP] = pose.point[0];
    x[YP] = pose.point[1];
    x[PHI] = pose.heading;
    x[VX] = speed;
    x[THETA] = 0.0;
    x
}

/// Runs the closed loop for `config.duration` seconds or until a crash.
pub fn run_closed_loop(
    config: &RaceConfig,
    track: &Track,
    model: &mut dyn OnlineModel,
    mode: LoopMode,
    seed: u64,
) -> Result<SimLog> {
    config.validate(track)?;
    if model.n_outputs() != RESIDUAL_ROWS.len() {
        return Err(Error::config(format!("the residual model must have {} outputs", RESIDUAL_ROWS.len())));
    }
    let cc = &config.controller;
    let dt = cc.dt;
    let ocp = RaceOcp::new(config.vehicle.clone(), track.clone(), cc.clone())?;
    let spec = OcpSpec {
        horizon: cc.horizon,
        dt,
        b_residual: RaceConfig::residual_map(),
        sigma_w: config.process_noise_covariance(),
        slack_penalty: cc.slack_penalty,
        regularization: cc.regularization,
        tighten: mode.tighten,
    };
    let solver = InteriorPoint::default();
    let (u_lo, u_hi) = stgp_mpc::OcpProblem::input_bounds(&ocp);
    let noise: Vec<Normal<f64>> = config
        .process_noise_std
        .iter()
        .map(|s| Normal::new(0.0, *s).map_err(|e| Error::config(e.to_string())))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut x = initial_state(track, config.initial_speed);
    let mut u_guess = DVector::zeros(N_U);
    u_guess[U_PROGRESS] = config.initial_speed;
    let mut iterate = OcpIterate::rollout(&ocp, &x, vec![u_guess; cc.horizon]);

    let lap_length = track.length();
    let mut progress = track.project([x[XP], x[YP]], Some(0.0), 0.25 * lap_length).progress;
    let start_progress = progress;
    let mut laps: u32 = 0;
    let mut lap_start = 0.0;
    let mut learning_active = config.learning_after_laps == 0;
    let mut log = SimLog { dt, track_length: lap_length, records: Vec::new(), laps: Vec::new(), crash_time: None };

    for k in 0..config.steps() {
        let t = k as f64 * dt;
        let proj = track.project([x[XP], x[YP]], Some(progress), 0.25 * lap_length);
        progress = proj.progress;
        if proj.e_lat.abs() > proj.pose.half_width + config.crash_band {
            log.crash_time = Some(t);
            log::warn!("left the track at t = {t:.2} s (e_lat = {:.3} m)", proj.e_lat);
            break;
        }
        if progress - start_progress >= (laps + 1) as f64 * lap_length {
            laps += 1;
            log.laps.push(LapEvent { lap: laps, time: t, lap_time: t - lap_start });
            lap_start = t;
            if laps >= config.learning_after_laps {
                learning_active = true;
            }
        }

        let tic = Instant::now();
        let report = sqp_rti_step(&mut iterate, &ocp, &*model, &solver, &spec, &x, RtiOptions { shift: k > 0 })?;
        let solve_time = tic.elapsed().as_secs_f64();
        let u = DVector::from_fn(N_U, |i, _| iterate.us[0][i].clamp(u_lo[i], u_hi[i]));

        // one-step prediction at the applied input
        let nominal_next = rk4_next(&ocp.model, &x, &u, dt, cc.model_substeps);
        let eval = model.evaluate_stages(std::slice::from_ref(&x), std::slice::from_ref(&u))?;
        let g = &eval[0];
        let mut predicted = nominal_next.clone();
        for (i, row) in RESIDUAL_ROWS.iter().enumerate() {
            predicted[*row] += g.mean[i];
        }

        // plant
        let delta_0 = config.perturbation.delta_0(t);
        let plant = Bicycle { params: config.vehicle.clone(), delta_0 };
        let mut x_next = rk4_next(&plant, &x, &u, dt, config.plant_substeps);
        for (i, row) in RESIDUAL_ROWS.iter().enumerate() {
            x_next[*row] += noise[i].sample(&mut rng);
        }
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Controller(stgp_mpc::Error::Numerical(format!("plant state diverged at t = {t}"))));
        }
        let y = extract_residual(&x_next, &nominal_next);

        let tic = Instant::now();
        if mode.learning && learning_active {
            model.advance(Some((&x, &u, &y)))?;
        } else {
            model.advance(None)?;
        }
        let update_time = tic.elapsed().as_secs_f64();

        let y_std: Vec<f64> = (0..RESIDUAL_ROWS.len())
            .map(|i| (g.variance[(i, i)].max(0.0) + config.process_noise_std[i].powi(2)).sqrt())
            .collect();
        log.records.push(StepRecord {
            step: k as u64,
            time: t,
            state: x.iter().cloned().collect(),
            input: u.iter().cloned().collect(),
            predicted: predicted.iter().cloned().collect(),
            residual: y.iter().cloned().collect(),
            residual_mean: g.mean.iter().cloned().collect(),
            residual_std: y_std,
            delta_0,
            e_lat: proj.e_lat,
            half_width: proj.pose.half_width,
            progress: progress - start_progress,
            laps,
            learning: mode.learning && learning_active,
            soft_active: report.status == StepStatus::SoftConstraintsActive,
            qp_iterations: report.qp_iterations as u32,
            solve_time,
            update_time,
        });

        x = x_next;
    }
    Ok(log)
}
