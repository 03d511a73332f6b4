//! Dynamic bicycle model with simplified Pacejka lateral tire forces.
//!
//! State `x = [x_p, y_p, φ, v_x, v_y, ω, a, δ, θ]`, input
//! `u = [u_a, u_δ, u_θ]` (rates of the torque command, steering angle and
//! track progress).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use stgp_mpc::ContinuousDynamics;

use crate::error::{Error, Result};
use crate::perturbation::{apply_perturbation, perturbation_slope};

pub const N_X: usize = 9;
pub const N_U: usize = 3;

pub const XP: usize = 0;
pub const YP: usize = 1;
pub const PHI: usize = 2;
pub const VX: usize = 3;
pub const VY: usize = 4;
pub const OMEGA: usize = 5;
pub const TORQUE: usize = 6;
pub const STEER: usize = 7;
pub const THETA: usize = 8;

pub const U_TORQUE: usize = 0;
pub const U_STEER: usize = 1;
pub const U_PROGRESS: usize = 2;

pub const STATE_NAMES: [&str; N_X] = ["x", "y", "phi", "vx", "vy", "omega", "a", "delta", "theta"];
pub const INPUT_NAMES: [&str; N_U] = ["u_a", "u_delta", "u_theta"];

/// Lateral force `D sin(C atan(B α))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pacejka {
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Pacejka {
    /// Force and its slope in `α`.
    fn eval(&self, alpha: f64) -> (f64, f64) {
        let ba = self.b * alpha;
        let arg = self.c * ba.atan();
        (self.d * arg.sin(), self.d * arg.cos() * self.c * self.b / (1.0 + ba * ba))
    }
}

/// Defaults describe a 1:28-scale car of about 0.2 kg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia_z: f64,
    pub l_front: f64,
    pub l_rear: f64,
    pub front_tire: Pacejka,
    pub rear_tire: Pacejka,
    pub c_m1: f64,
    pub c_m2: f64,
    pub c_r0: f64,
    pub c_d: f64,
    /// Speed scale of the `tanh` rolling-resistance sign.
    pub rolling_smoothing: f64,
    /// Below this speed the slip-angle denominator is a smooth floor.
    pub slip_speed_floor: f64,
    pub steer_max: f64,
    pub torque_min: f64,
    pub torque_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.2,
            inertia_z: 3.0e-4,
            l_front: 0.045,
            l_rear: 0.045,
            front_tire: Pacejka { b: 2.6, c: 1.2, d: 0.6 },
            rear_tire: Pacejka { b: 3.4, c: 1.27, d: 0.55 },
            c_m1: 1.0,
            c_m2: 0.25,
            c_r0: 0.05,
            c_d: 0.02,
            rolling_smoothing: 0.05,
            slip_speed_floor: 0.3,
            steer_max: 0.35,
            torque_min: -1.0,
            torque_max: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia_z", self.inertia_z),
            ("l_front", self.l_front),
            ("l_rear", self.l_rear),
            ("rolling_smoothing", self.rolling_smoothing),
            ("slip_speed_floor", self.slip_speed_floor),
            ("steer_max", self.steer_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("vehicle {name} must be positive, got {v}")));
            }
        }
        for (name, t) in [("front", self.front_tire), ("rear", self.rear_tire)] {
            if !(t.d >= 0.0) || !(t.b > 0.0) || !(t.c > 0.0 && t.c < 2.0) {
                return Err(Error::config(format!("{name} tire needs B > 0, 0 < C < 2 and D ≥ 0")));
            }
        }
        if !(self.torque_min < self.torque_max) {
            return Err(Error::config("torque range is empty"));
        }
        Ok(())
    }

    /// `½ m (v_x² + v_y²) + ½ I_z ω²`.
    pub fn kinetic_energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.mass * (x[VX] * x[VX] + x[VY] * x[VY]) + 0.5 * self.inertia_z * x[OMEGA] * x[OMEGA]
    }
}

/// Slip-angle denominator: `v_x` above the floor `v_b`, else
/// `(v_x² + v_b²) / (2 v_b)`, which matches value and slope at `v_b`.
fn slip_speed(vx: f64, floor: f64) -> (f64, f64) {
    if vx >= floor {
        (vx, 1.0)
    } else {
        ((vx * vx + floor * floor) / (2.0 * floor), vx / floor)
    }
}

/// `ẋ = f(x, u)` and its Jacobians, with the steering remapped by `δ₀`.
pub fn bicycle_derivative(
    x: &DVector<f64>,
    u: &DVector<f64>,
    p: &VehicleParams,
    delta_0: f64,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (phi, vx, vy, w, a, steer) = (x[PHI], x[VX], x[VY], x[OMEGA], x[TORQUE], x[STEER]);
    let de = apply_perturbation(steer, delta_0, p.steer_max);
    let de_d = perturbation_slope(steer, delta_0, p.steer_max);
    let (sd, cd) = de.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let (vs, vs_d) = slip_speed(vx, p.slip_speed_floor);

    // slip angles and their partials in (v_x, v_y, ω)
    let nf = vy + p.l_front * w;
    let rf = nf / vs;
    let kf = 1.0 / (1.0 + rf * rf);
    let alpha_f = de - rf.atan();
    let af = [kf * nf / (vs * vs) * vs_d, -kf / vs, -kf * p.l_front / vs];

    let nr = vy - p.l_rear * w;
    let rr = nr / vs;
    let kr = 1.0 / (1.0 + rr * rr);
    let alpha_r = -rr.atan();
    let ar = [kr * nr / (vs * vs) * vs_d, -kr / vs, kr * p.l_rear / vs];

    let (ff, ff_d) = p.front_tire.eval(alpha_f);
    let (fr, fr_d) = p.rear_tire.eval(alpha_r);

    let th = (vx / p.rolling_smoothing).tanh();
    let frx = (p.c_m1 - p.c_m2 * vx) * a - p.c_r0 * th - p.c_d * vx * vx.abs();
    let frx_vx = -p.c_m2 * a - p.c_r0 / p.rolling_smoothing * (1.0 - th * th) - 2.0 * p.c_d * vx.abs();
    let frx_a = p.c_m1 - p.c_m2 * vx;

    let (m, iz, lf, lr) = (p.mass, p.inertia_z, p.l_front, p.l_rear);
    let mut f = DVector::zeros(N_X);
    f[XP] = vx * cp - vy * sp;
    f[YP] = vx * sp + vy * cp;
    f[PHI] = w;
    f[VX] = (frx - ff * sd) / m + vy * w;
    f[VY] = (fr + ff * cd) / m - vx * w;
    f[OMEGA] = (ff * lf * cd - fr * lr) / iz;
    f[TORQUE] = u[U_TORQUE];
    f[STEER] = u[U_STEER];
    f[THETA] = u[U_PROGRESS];

    let mut jx = DMatrix::zeros(N_X, N_X);
    jx[(XP, PHI)] = -vx * sp - vy * cp;
    jx[(XP, VX)] = cp;
    jx[(XP, VY)] = -sp;
    jx[(YP, PHI)] = vx * cp - vy * sp;
    jx[(YP, VX)] = sp;
    jx[(YP, VY)] = cp;
    jx[(PHI, OMEGA)] = 1.0;

    let vel = [VX, VY, OMEGA];
    for k in 0..3 {
        let dff = ff_d * af[k];
        let dfr = fr_d * ar[k];
        jx[(VX, vel[k])] = -dff * sd / m;
        jx[(VY, vel[k])] = (dfr + dff * cd) / m;
        jx[(OMEGA, vel[k])] = (dff * lf * cd - dfr * lr) / iz;
    }
    jx[(VX, VX)] += frx_vx / m;
    jx[(VX, VY)] += w;
    jx[(VX, OMEGA)] += vy;
    jx[(VY, VX)] -= w;
    jx[(VY, OMEGA)] -= vx;
    jx[(VX, TORQUE)] = frx_a / m;

    // steering enters through δ_eff and α_f
    let d_steer_vx = -(ff_d * sd + ff * cd) * de_d;
    let d_steer_lat = (ff_d * cd - ff * sd) * de_d;
    jx[(VX, STEER)] = d_steer_vx / m;
    jx[(VY, STEER)] = d_steer_lat / m;
    jx[(OMEGA, STEER)] = d_steer_lat * lf / iz;

    let mut ju = DMatrix::zeros(N_X, N_U);
    ju[(TORQUE, U_TORQUE)] = 1.0;
    ju[(STEER, U_STEER)] = 1.0;
    ju[(THETA, U_PROGRESS)] = 1.0;
    (f, jx, ju)
}

/// The bicycle model as a [`ContinuousDynamics`], with a fixed `δ₀`.
#[derive(Debug, Clone)]
pub struct Bicycle {
    pub params: VehicleParams,
    pub delta_0: f64,
}

impl ContinuousDynamics for Bicycle {
    fn n_x(&self) -> usize {
        N_X
    }
    fn n_u(&self) -> usize {
        N_U
    }
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        bicycle_derivative(x, u, &self.params, self.delta_0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: [f64; 9]) -> DVector<f64> {
        DVector::from_row_slice(&v)
    }

    #[test]
    fn standstill_is_an_equilibrium() {
        let p = VehicleParams::default();
        let (f, _, _) = bicycle_derivative(&DVector::zeros(N_X), &DVector::zeros(N_U), &p, 0.0);
        assert_eq!(f, DVector::zeros(N_X));
    }

    #[test]
    fn straight_rolling_has_no_lateral_dynamics() {
        let p = VehicleParams::default();
        let x = state([0.3, -1.0, 0.7, 1.5, 0.0, 0.0, 0.4, 0.0, 2.0]);
        let (f, _, _) = bicycle_derivative(&x, &DVector::zeros(N_U), &p, 0.0);
        assert_eq!(f[VY], 0.0);
        assert_eq!(f[OMEGA], 0.0);
        assert!((f[XP] - 1.5 * 0.7f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn zero_slip_gives_zero_tire_force() {
        let t = Pacejka { b: 2.0, c: 1.3, d: 0.7 };
        assert_eq!(t.eval(0.0).0, 0.0);
    }

    #[test]
    fn slip_floor_is_continuous() {
        let (lo, dlo) = slip_speed(0.1 - 1e-12, 0.1);
        let (hi, dhi) = slip_speed(0.1, 0.1);
        assert!((lo - hi).abs() < 1e-12 && (dlo - dhi).abs() < 1e-10);
        assert!(slip_speed(0.0, 0.1).0 > 0.0);
    }

    #[test]
    fn positive_steer_turns_left() {
        let p = VehicleParams::default();
        let x = state([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.2, 0.0]);
        let (f, _, _) = bicycle_derivative(&x, &DVector::zeros(N_U), &p, 0.0);
        assert!(f[OMEGA] > 0.0 && f[VY] > 0.0);
        // a positive neutral offset does the same with the wheel centred
        let x0 = state([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let (f0, _, _) = bicycle_derivative(&x0, &DVector::zeros(N_U), &p, 0.1);
        assert!(f0[OMEGA] > 0.0);
    }

    #[test]
    fn default_params_are_valid() {
        VehicleParams::default().validate().unwrap();
        let bad = VehicleParams { front_tire: Pacejka { b: 1.0, c: 2.5, d: 1.0 }, ..VehicleParams::default() };
        assert!(bad.validate().is_err());
    }
}
