//! Neutral-steering perturbation: a monotone remap of the steering angle
//! whose offset at `δ = 0` varies over time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `δ + δ₀ (1 − (δ/δ_max)²)` inside the actuator range, identity outside.
///
/// Strictly increasing for `|δ₀| < δ_max / 2`, fixes `±δ_max`, and is
/// exactly the identity when `δ₀ = 0`.
pub fn apply_perturbation(delta: f64, delta_0: f64, delta_max: f64) -> f64 {
    if delta_0 == 0.0 {
        return delta;
    }
    let r = delta / delta_max;
    delta + delta_0 * (1.0 - r * r).max(0.0)
}

/// `d apply_perturbation / dδ`.
pub fn perturbation_slope(delta: f64, delta_0: f64, delta_max: f64) -> f64 {
    if delta_0 == 0.0 || delta.abs() >= delta_max {
        return 1.0;
    }
    1.0 - 2.0 * delta_0 * delta / (delta_max * delta_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    Off,
    /// `(time, value)` knots joined by half-cosine ramps; constant outside.
    /// Two knots at the same time give a step.
    Knots { knots: Vec<[f64; 2]> },
    /// `amplitude · sin(2π (t − start) / period)`.
    Sine { period: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSchedule {
    pub start: f64,
    pub amplitude: f64,
    pub waveform: Waveform,
}

impl Default for PerturbationSchedule {
    /// Zero until 15 s, then `+0.15`, `−0.15` and back to zero.
    fn default() -> Self {
        Self {
            start: 15.0,
            amplitude: 0.15,
            waveform: Waveform::Knots {
                knots: vec![
                    [15.0, 0.0],
                    [20.0, 0.15],
                    [35.0, 0.15],
                    [42.0, -0.15],
                    [57.0, -0.15],
                    [62.0, 0.0],
                ],
            },
        }
    }
}

impl PerturbationSchedule {
    pub fn off() -> Self {
        Self { start: 0.0, amplitude: 0.0, waveform: Waveform::Off }
    }

    pub fn validate(&self, delta_max: f64) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.start.is_finite() {
            return Err(Error::config("perturbation amplitude must be nonnegative and start finite"));
        }
        // keeps the steering remap strictly monotone
        if self.amplitude >= 0.5 * delta_max {
            return Err(Error::config(format!(
                "perturbation amplitude {} must stay below half the steering range {}",
                self.amplitude, delta_max
            )));
        }
        match &self.waveform {
            Waveform::Off => {}
            Waveform::Knots { knots } => {
                for w in knots.windows(2) {
                    if !(w[1][0] >= w[0][0]) {
                        return Err(Error::config("perturbation knot times must be nondecreasing"));
                    }
                }
                if knots.iter().any(|k| !k[0].is_finite() || !(k[1].abs() <= self.amplitude)) {
                    return Err(Error::config("perturbation knot values must lie within the amplitude"));
                }
            }
            Waveform::Sine { period } => {
                if !(*period > 0.0) {
                    return Err(Error::config("perturbation period must be positive"));
                }
            }
        }
        Ok(())
    }

    /// `δ₀(t)`; zero before `start`.
    pub fn delta_0(&self, t: f64) -> f64 {
        if t < self.start {
            return 0.0;
        }
        let v = match &self.waveform {
            Waveform::Off => 0.0,
            Waveform::Sine { period } => self.amplitude * (2.0 * std::f64::consts::PI * (t - self.start) / period).sin(),
            Waveform::Knots { knots } => interpolate(knots, t),
        };
        v.clamp(-self.amplitude, self.amplitude)
    }
}

fn interpolate(knots: &[[f64; 2]], t: f64) -> f64 {
    let Some(first) = knots.first() else { return 0.0 };
    if t < first[0] {
        return first[1];
    }
    for w in knots.windows(2) {
        let ([t0, v0], [t1, v1]) = (w[0], w[1]);
        if t < t1 {
            let s = (t - t0) / (t1 - t0);
            let blend = 0.5 - 0.5 * (std::f64::consts::PI * s).cos();
            return v0 + (v1 - v0) * blend;
        }
    }
    knots.last().expect("non-empty")[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DMAX: f64 = 0.35;

    #[test]
    fn neutral_offset_is_delta_0() {
        assert_eq!(apply_perturbation(0.0, 0.15, DMAX), 0.15);
        assert_eq!(apply_perturbation(DMAX, 0.15, DMAX), DMAX);
        assert_eq!(apply_perturbation(-DMAX, -0.15, DMAX), -DMAX);
    }

    #[test]
    fn default_schedule_shape() {
        let s = PerturbationSchedule::default();
        s.validate(DMAX).unwrap();
        assert_eq!(s.delta_0(0.0), 0.0);
        assert_eq!(s.delta_0(14.99), 0.0);
        assert!(s.delta_0(17.5) > 0.0 && s.delta_0(17.5) < 0.15);
        assert_eq!(s.delta_0(25.0), 0.15);
        assert_eq!(s.delta_0(50.0), -0.15);
        assert_eq!(s.delta_0(80.0), 0.0);
    }

    #[test]
    fn step_knots_switch_instantly() {
        let s = PerturbationSchedule {
            start: 1.0,
            amplitude: 0.1,
            waveform: Waveform::Knots { knots: vec![[2.0, 0.0], [2.0, 0.1]] },
        };
        assert_eq!(s.delta_0(1.999), 0.0);
        assert_eq!(s.delta_0(2.0), 0.1);
    }

    #[test]
    fn oversized_amplitude_rejected() {
        let s = PerturbationSchedule { amplitude: 0.2, ..PerturbationSchedule::default() };
        assert!(s.validate(DMAX).is_err());
    }

    proptest! {
        #[test]
        fn identity_when_offset_is_zero(d in -1.0f64..1.0) {
            prop_assert_eq!(apply_perturbation(d, 0.0, DMAX).to_bits(), d.to_bits());
        }

        #[test]
        fn strictly_monotone(a in -0.5f64..0.5, b in -0.5f64..0.5, d0 in -0.15f64..0.15) {
            prop_assume!(a < b);
            prop_assert!(apply_perturbation(a, d0, DMAX) < apply_perturbation(b, d0, DMAX));
        }

        #[test]
        fn slope_matches_difference_quotient(d in -0.34f64..0.34, d0 in -0.15f64..0.15) {
            let h = 1e-6;
            let fd = (apply_perturbation(d + h, d0, DMAX) - apply_perturbation(d - h, d0, DMAX)) / (2.0 * h);
            prop_assert!((fd - perturbation_slope(d, d0, DMAX)).abs() < 1e-7);
        }

        #[test]
        fn schedule_bounded_by_amplitude(t in -10.0f64..120.0) {
            let s = PerturbationSchedule::default();
            prop_assert!(s.delta_0(t).abs() <= s.amplitude);
            let sine = PerturbationSchedule { waveform: Waveform::Sine { period: 7.0 }, ..s };
            prop_assert!(sine.delta_0(t).abs() <= sine.amplitude);
        }
    }
}
