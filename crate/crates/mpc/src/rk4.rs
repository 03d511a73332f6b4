//! Classical Runge-Kutta discretization with exact chain-rule Jacobians.

use nalgebra::{DMatrix, DVector};

/// A continuous-time model `ẋ = f(x, u)` with analytic Jacobians.
pub trait ContinuousDynamics {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    /// Returns `(f, ∂f/∂x, ∂f/∂u)`.
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>);
}

/// Discrete step `x⁺ = F(x, u)` with `A = ∂F/∂x` and `B = ∂F/∂u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub next: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// One RK4 step with the input held constant.
pub fn rk4_step<M: ContinuousDynamics + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> Linearization {
    let n = x.len();
    let eye = DMatrix::<f64>::identity(n, n);

    let (k1, a1, b1) = model.derivative(x, u);
    let x2 = x + &k1 * (dt / 2.0);
    let (k2, a2, b2) = model.derivative(&x2, u);
    let x3 = x + &k2 * (dt / 2.0);
    let (k3, a3, b3) = model.derivative(&x3, u);
    let x4 = x + &k3 * dt;
    let (k4, a4, b4) = model.derivative(&x4, u);

    // dk_i/dx and dk_i/du through the intermediate states
    let dk1x = a1;
    let dk1u = b1;
    let dk2x = &a2 * (&eye + &dk1x * (dt / 2.0));
    let dk2u = &a2 * &dk1u * (dt / 2.0) + b2;
    let dk3x = &a3 * (&eye + &dk2x * (dt / 2.0));
    let dk3u = &a3 * &dk2u * (dt / 2.0) + b3;
    let dk4x = &a4 * (&eye + &dk3x * dt);
    let dk4u = &a4 * &dk3u * dt + b4;

    let w = dt / 6.0;
    let next = x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * w;
    let a = eye + (dk1x + dk2x * 2.0 + dk3x * 2.0 + dk4x) * w;
    let b = (dk1u + dk2u * 2.0 + dk3u * 2.0 + dk4u) * w;
    Linearization { next, a, b }
}

/// `substeps` RK4 steps of `dt / substeps` each, Jacobians composed.
pub fn rk4_substeps<M: ContinuousDynamics + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    substeps: usize,
) -> Linearization {
    let substeps = substeps.max(1);
    let h = dt / substeps as f64;
    let mut lin = rk4_step(model, x, u, h);
    for _ in 1..substeps {
        let step = rk4_step(model, &lin.next, u, h);
        lin = Linearization {
            b: &step.a * &lin.b + step.b,
            a: step.a * lin.a,
            next: step.next,
        };
    }
    lin
}

/// State-only RK4 propagation, skipping the Jacobian work.
pub fn rk4_next<M: ContinuousDynamics + ?Sized>(
    model: &M,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    substeps: usize,
) -> DVector<f64> {
    let substeps = substeps.max(1);
    let h = dt / substeps as f64;
    let f = |x: &DVector<f64>| model.derivative(x, u).0;
    let mut x = x.clone();
    for _ in 0..substeps {
        let k1 = f(&x);
        let k2 = f(&(&x + &k1 * (h / 2.0)));
        let k3 = f(&(&x + &k2 * (h / 2.0)));
        let k4 = f(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use stgp_core::temporal_ssm::matrix_exp;

    struct Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    }

    impl ContinuousDynamics for Linear {
        fn n_x(&self) -> usize {
            self.a.nrows()
        }
        fn n_u(&self) -> usize {
            self.b.ncols()
        }
        fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
            (&self.a * x + &self.b * u, self.a.clone(), self.b.clone())
        }
    }

    #[test]
    fn zero_dynamics_is_identity() {
        let m = Linear { a: DMatrix::zeros(3, 3), b: DMatrix::zeros(3, 1) };
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let lin = rk4_step(&m, &x, &DVector::zeros(1), 0.1);
        assert_eq!(lin.next, x);
        assert_eq!(lin.a, DMatrix::identity(3, 3));
    }

    #[test]
    fn double_integrator_is_exact() {
        let m = Linear {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        };
        let lin = rk4_step(&m, &DVector::zeros(2), &DVector::from_element(1, 1.0), 1.0);
        assert_eq!(lin.next.as_slice(), &[0.5, 1.0]);
        assert_eq!(lin.b.as_slice(), &[0.5, 1.0]);
    }

    fn test_matrix(norm: f64) -> DMatrix<f64> {
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 2.0, 0.5, -2.0, -0.5, 1.0, 0.3, -1.5, -2.0]);
        let scale = norm / a.norm();
        a * scale
    }

    #[test]
    fn linear_system_matches_matrix_exponential() {
        let a = test_matrix(1.0);
        let m = Linear { a: a.clone(), b: DMatrix::zeros(3, 1) };
        let x = DVector::from_vec(vec![0.4, -1.0, 2.0]);
        let dt = 1.0 / 30.0;
        let lin = rk4_step(&m, &x, &DVector::zeros(1), dt);
        let exact = matrix_exp(&(&a * dt));
        assert!((&lin.next - &exact * &x).amax() <= 1e-9);
        assert!((&lin.a - &exact).amax() <= 1e-9);
    }

    #[test]
    fn local_error_is_fifth_order() {
        let m = Linear { a: test_matrix(5.0), b: DMatrix::zeros(3, 1) };
        let err = |dt: f64| (rk4_step(&m, &DVector::zeros(3), &DVector::zeros(1), dt).a - matrix_exp(&(&m.a * dt))).amax();
        let dt = 1.0 / 30.0;
        let ratio = err(dt) / err(dt / 2.0);
        assert!((ratio - 32.0).abs() < 3.0, "ratio {ratio}");
        // the leading term (‖A‖ dt)⁵ / 5! bounds the error
        assert!(err(dt) <= (5.0 * dt).powi(5) / 120.0);
    }

    #[test]
    fn substeps_compose_jacobians() {
        let m = Linear {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.2]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        };
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let u = DVector::from_element(1, 0.3);
        let lin = rk4_substeps(&m, &x, &u, 0.2, 4);
        let mut manual = x.clone();
        for _ in 0..4 {
            manual = rk4_step(&m, &manual, &u, 0.05).next;
        }
        assert!((&lin.next - &manual).amax() < 1e-15);
        assert_eq!(rk4_next(&m, &x, &u, 0.2, 4), lin.next);
        let mut a = DMatrix::<f64>::identity(2, 2);
        let mut b = DMatrix::<f64>::zeros(2, 1);
        for _ in 0..4 {
            let step = rk4_step(&m, &x, &u, 0.05);
            b = &step.a * b + step.b;
            a = step.a * a;
        }
        assert!((&lin.a - a).amax() < 1e-15);
        assert!((&lin.b - b).amax() < 1e-15);
    }
}
