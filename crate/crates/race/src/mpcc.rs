//! Contouring-style racing cost and the OCP handed to the SQP solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use stgp_mpc::{rk4_substeps, ConstraintRow, Linearization, LsqCost, OcpProblem};

use crate::error::{Error, Result};
use crate::track::{track_constraints, Track};
use crate::vehicle::{
    Bicycle, VehicleParams, N_U, N_X, PHI, STEER, THETA, TORQUE, U_PROGRESS, U_STEER, U_TORQUE, VY, XP, YP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpccWeights {
    pub contouring: f64,
    pub lag: f64,
    /// Reward per unit of `u_θ`.
    pub progress: f64,
    /// Heading relative to the track tangent at `θ`.
    pub heading: f64,
    /// Body-frame lateral velocity; keeps the car from sliding or spinning.
    pub sideslip: f64,
    pub torque_rate: f64,
    pub steer_rate: f64,
    pub progress_rate: f64,
    /// Multiplies contouring and lag on the terminal state.
    pub terminal_scale: f64,
}

impl Default for MpccWeights {
    fn default() -> Self {
        Self {
            contouring: 20.0,
            lag: 200.0,
            progress: 1.0,
            heading: 1.0,
            sideslip: 1.0,
            torque_rate: 0.01,
            steer_rate: 0.01,
            progress_rate: 0.01,
            terminal_scale: 5.0,
        }
    }
}

impl MpccWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.contouring,
            self.lag,
            self.progress,
            self.heading,
            self.sideslip,
            self.torque_rate,
            self.steer_rate,
            self.progress_rate,
            self.terminal_scale,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("cost weights must be finite and nonnegative"));
        }
        if self.torque_rate <= 0.0 || self.steer_rate <= 0.0 || self.progress_rate <= 0.0 {
            return Err(Error::config("input-rate weights must be positive"));
        }
        Ok(())
    }
}

/// Contouring and lag errors of the position against the centerline point
/// at progress `θ`, with gradients in the full state.
#[derive(Debug, Clone, PartialEq)]
pub struct MpccTerms {
    /// Lateral offset from the reference point (positive left).
    pub contouring: f64,
    /// Along-track offset (positive when the car is ahead of `θ`).
    pub lag: f64,
    /// `φ − ψ(θ)` wrapped to `(−π, π]`.
    pub heading: f64,
    pub grad_contouring: DVector<f64>,
    pub grad_lag: DVector<f64>,
    pub grad_heading: DVector<f64>,
}

pub fn mpcc_cost_terms(x: &DVector<f64>, track: &Track) -> MpccTerms {
    let pose = track.pose(x[THETA]);
    let (t, n) = (pose.tangent(), pose.normal());
    let d = [x[XP] - pose.point[0], x[YP] - pose.point[1]];
    let e_c = n[0] * d[0] + n[1] * d[1];
    let e_l = t[0] * d[0] + t[1] * d[1];
    let k = pose.curvature;
    let mut gc = DVector::zeros(N_X);
    gc[XP] = n[0];
    gc[YP] = n[1];
    gc[THETA] = -k * e_l;
    let mut gl = DVector::zeros(N_X);
    gl[XP] = t[0];
    gl[YP] = t[1];
    gl[THETA] = k * e_c - 1.0;
    let e_h = wrap_angle(x[PHI] - pose.heading);
    let mut gh = DVector::zeros(N_X);
    gh[PHI] = 1.0;
    gh[THETA] = -k;
    MpccTerms { contouring: e_c, lag: e_l, heading: e_h, grad_contouring: gc, grad_lag: gl, grad_heading: gh }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI { w - std::f64::consts::TAU } else { w }
}

/// Input-rate box and the actuator ranges enforced as hard state rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputLimits {
    pub torque_rate: f64,
    pub steer_rate: f64,
    pub progress_max: f64,
}

impl Default for InputLimits {
    fn default() -> Self {
        Self { torque_rate: 5.0, steer_rate: 3.0, progress_max: 4.0 }
    }
}

/// Controller settings shared by every variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub dt: f64,
    /// RK4 substeps of the prediction model per control period.
    pub model_substeps: usize,
    pub weights: MpccWeights,
    pub limits: InputLimits,
    /// Distance kept from the track edge.
    pub margin: f64,
    /// Satisfaction probability of the track-boundary rows.
    pub boundary_prob: f64,
    pub slack_penalty: f64,
    pub regularization: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon: 40,
            dt: 1.0 / 30.0,
            model_substeps: 4,
            weights: MpccWeights::default(),
            limits: InputLimits::default(),
            margin: 0.05,
            boundary_prob: 0.9,
            slack_penalty: 1e3,
            regularization: 1e-6,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, track: &Track) -> Result<()> {
        self.weights.validate()?;
        if self.horizon == 0 || !(self.dt > 0.0) || self.model_substeps == 0 {
            return Err(Error::config("horizon, dt and model substeps must be positive"));
        }
        if !(self.margin >= 0.0) || self.margin >= track.min_half_width() {
            return Err(Error::config(format!(
                "margin {} must be nonnegative and below the narrowest half width {}",
                self.margin,
                track.min_half_width()
            )));
        }
        if !(self.boundary_prob >= 0.5 && self.boundary_prob < 1.0) {
            return Err(Error::config("boundary probability must lie in [0.5, 1)"));
        }
        if !(self.slack_penalty > 0.0) || !(self.regularization >= 0.0) {
            return Err(Error::config("slack penalty must be positive and regularization nonnegative"));
        }
        let l = &self.limits;
        if !(l.torque_rate > 0.0 && l.steer_rate > 0.0 && l.progress_max > 0.0) {
            return Err(Error::config("input limits must be positive"));
        }
        Ok(())
    }
}

/// Racing OCP over the nominal (unperturbed) bicycle model.
#[derive(Debug, Clone)]
pub struct RaceOcp {
    pub model: Bicycle,
    pub track: Track,
    pub config: ControllerConfig,
}

impl RaceOcp {
    pub fn new(params: VehicleParams, track: Track, config: ControllerConfig) -> Result<Self> {
        params.validate()?;
        config.validate(&track)?;
        Ok(Self { model: Bicycle { params, delta_0: 0.0 }, track, config })
    }

    fn tracking_cost(&self, x: &DVector<f64>, scale: f64, n_res: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let terms = mpcc_cost_terms(x, &self.track);
        let mut r = DVector::zeros(n_res);
        let mut jx = DMatrix::zeros(n_res, N_X);
        let mut w = DMatrix::zeros(n_res, n_res);
        r[0] = terms.contouring;
        r[1] = terms.lag;
        r[2] = terms.heading;
        jx.row_mut(0).copy_from(&terms.grad_contouring.transpose());
        jx.row_mut(1).copy_from(&terms.grad_lag.transpose());
        jx.row_mut(2).copy_from(&terms.grad_heading.transpose());
        w[(0, 0)] = scale * self.config.weights.contouring;
        w[(1, 1)] = scale * self.config.weights.lag;
        w[(2, 2)] = scale * self.config.weights.heading;
        (r, jx, w)
    }
}

impl OcpProblem for RaceOcp {
    fn n_x(&self) -> usize {
        N_X
    }

    fn n_u(&self) -> usize {
        N_U
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Linearization {
        rk4_substeps(&self.model, x, u, self.config.dt, self.config.model_substeps)
    }

    /// Residuals `[e_c, e_l, e_ψ, v_y, u_a, u_δ, u_θ]`.
    fn stage_cost(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> LsqCost {
        let (mut r, mut jx, mut w) = self.tracking_cost(x, 1.0, 7);
        let wt = &self.config.weights;
        r[3] = x[VY];
        jx[(3, VY)] = 1.0;
        w[(3, 3)] = wt.sideslip;
        let mut ju = DMatrix::zeros(7, N_U);
        for (k, idx) in [U_TORQUE, U_STEER, U_PROGRESS].into_iter().enumerate() {
            r[4 + k] = u[idx];
            ju[(4 + k, idx)] = 1.0;
        }
        w[(4, 4)] = wt.torque_rate;
        w[(5, 5)] = wt.steer_rate;
        w[(6, 6)] = wt.progress_rate;
        let mut gu = DVector::zeros(N_U);
        gu[U_PROGRESS] = -self.config.weights.progress;
        LsqCost { r, jx, ju, w, gx: DVector::zeros(N_X), gu }
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> LsqCost {
        let (r, jx, w) = self.tracking_cost(x, self.config.weights.terminal_scale, 3);
        LsqCost { r, jx, ju: DMatrix::zeros(3, N_U), w, gx: DVector::zeros(N_X), gu: DVector::zeros(N_U) }
    }

    fn constraints(&self, _: usize, x: &DVector<f64>) -> Vec<ConstraintRow> {
        let tc = track_constraints(x, &self.track, self.config.margin, Some(x[THETA]));
        let p = &self.model.params;
        let [gl, gr] = tc.grads;
        let unit = |i: usize, s: f64| {
            let mut g = DVector::zeros(N_X);
            g[i] = s;
            g
        };
        vec![
            ConstraintRow { value: tc.values[0], grad: gl, soft: true, prob: self.config.boundary_prob },
            ConstraintRow { value: tc.values[1], grad: gr, soft: true, prob: self.config.boundary_prob },
            ConstraintRow { value: x[TORQUE] - p.torque_max, grad: unit(TORQUE, 1.0), soft: false, prob: 0.5 },
            ConstraintRow { value: p.torque_min - x[TORQUE], grad: unit(TORQUE, -1.0), soft: false, prob: 0.5 },
            ConstraintRow { value: x[STEER] - p.steer_max, grad: unit(STEER, 1.0), soft: false, prob: 0.5 },
            ConstraintRow { value: -p.steer_max - x[STEER], grad: unit(STEER, -1.0), soft: false, prob: 0.5 },
        ]
    }

    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let l = &self.config.limits;
        (
            DVector::from_row_slice(&[-l.torque_rate, -l.steer_rate, 0.0]),
            DVector::from_row_slice(&[l.torque_rate, l.steer_rate, l.progress_max]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackFile;

    fn oval() -> Track {
        Track::from_file(&TrackFile::default()).unwrap()
    }

    fn on_track(track: &Track, s: f64, lateral: f64, theta: f64) -> DVector<f64> {
        let pose = track.pose(s);
        let n = pose.normal();
        let mut x = DVector::zeros(N_X);
        x[XP] = pose.point[0] + lateral * n[0];
        x[YP] = pose.point[1] + lateral * n[1];
        x[THETA] = theta;
        x
    }

    #[test]
    fn centerline_has_zero_errors() {
        let t = oval();
        for s in [0.3, 2.7, 5.0] {
            let m = mpcc_cost_terms(&on_track(&t, s, 0.0, s), &t);
            assert!(m.contouring.abs() < 1e-12 && m.lag.abs() < 1e-12);
        }
    }

    #[test]
    fn lateral_offset_on_straight_is_pure_contouring() {
        let t = oval();
        let m = mpcc_cost_terms(&on_track(&t, 1.0, 0.07, 1.0), &t);
        assert!((m.contouring - 0.07).abs() < 1e-12);
        assert!(m.lag.abs() < 1e-12);
    }

    #[test]
    fn theta_gradient_matches_differences() {
        let t = oval();
        // on the first corner, where curvature enters
        let x = on_track(&t, 2.8, 0.05, 2.75);
        let m = mpcc_cost_terms(&x, &t);
        let h = 1e-6;
        let mut xp = x.clone();
        xp[THETA] += h;
        let mut xm = x.clone();
        xm[THETA] -= h;
        let (a, b) = (mpcc_cost_terms(&xp, &t), mpcc_cost_terms(&xm, &t));
        assert!(((a.contouring - b.contouring) / (2.0 * h) - m.grad_contouring[THETA]).abs() < 1e-7);
        assert!(((a.lag - b.lag) / (2.0 * h) - m.grad_lag[THETA]).abs() < 1e-7);
    }

    #[test]
    fn progress_reward_drives_u_theta_to_its_bound() {
        // with only the reward and its rate weight, argmin ½ r u² − q u is q / r
        let config = ControllerConfig {
            weights: MpccWeights { progress: 1.0, progress_rate: 0.01, ..MpccWeights::default() },
            ..ControllerConfig::default()
        };
        let ocp = RaceOcp::new(VehicleParams::default(), oval(), config).unwrap();
        let c = ocp.stage_cost(0, &DVector::zeros(N_X), &DVector::zeros(N_U));
        let unconstrained = -c.gu[U_PROGRESS] / c.w[(6, 6)];
        assert!(unconstrained > ocp.input_bounds().1[U_PROGRESS]);
    }

    #[test]
    fn margin_must_fit_inside_track() {
        let config = ControllerConfig { margin: 0.3, ..ControllerConfig::default() };
        assert!(RaceOcp::new(VehicleParams::default(), oval(), config).is_err());
    }
}
