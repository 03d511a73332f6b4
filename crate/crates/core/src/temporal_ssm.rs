//! Half-integer Matérn temporal kernels and their state-space form.
//!
//! A Matérn kernel with smoothness `nu = D - 1/2` is the covariance of the
//! first component of a `D`-dimensional linear SDE driven by white noise.
//! [`build_ssm`] constructs that SDE in companion form, [`discretize`] turns
//! it into the transition `(A, Q)` used by the Kalman recursion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Temporal kernel: smoothness `nu` and lengthscale `sigma_t` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalKernelSpec {
    pub nu: f64,
    pub sigma_t: f64,
}

impl TemporalKernelSpec {
    pub fn new(nu: f64, sigma_t: f64) -> Result<Self> {
        let spec = Self { nu, sigma_t };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.order()?;
        if !(self.sigma_t > 0.0) || !self.sigma_t.is_finite() {
            return Err(Error::config(format!(
                "temporal lengthscale must be positive, got {}",
                self.sigma_t
            )));
        }
        Ok(())
    }

    /// State dimension `D` with `nu = D - 1/2`.
    pub fn order(&self) -> Result<usize> {
        for d in 1..=3usize {
            if (self.nu - (d as f64 - 0.5)).abs() < 1e-12 {
                return Ok(d);
            }
        }
        Err(Error::config(format!(
            "unsupported smoothness nu = {} (expected 0.5, 1.5 or 2.5)",
            self.nu
        )))
    }

    /// `gamma = sqrt(2 nu) / sigma_t`.
    pub fn gamma(&self) -> f64 {
        (2.0 * self.nu).sqrt() / self.sigma_t
    }
}

/// Continuous-time realization `(F, G, H, P_inf)` of a Matérn kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSsm {
    pub d: usize,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub p_inf: DMatrix<f64>,
    pub gamma: f64,
    /// Diffusion coefficient; enters through `H = [sqrt(q), 0, ...]`.
    pub q: f64,
}

/// Discrete transition for one step `dt`: `A = exp(dt F)`,
/// `Q = P_inf - A P_inf A^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTransition {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub dt: f64,
}

/// Matérn covariance `k(tau)` for half-integer smoothness, normalized to `k(0) = 1`.
pub fn matern_cov(tau: f64, spec: &TemporalKernelSpec) -> Result<f64> {
    let d = spec.order()?;
    let r = spec.gamma() * tau.abs();
    let poly = match d {
        1 => 1.0,
        2 => 1.0 + r,
        _ => 1.0 + r + r * r / 3.0,
    };
    Ok(poly * (-r).exp())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

pub fn build_ssm(spec: &TemporalKernelSpec) -> Result<TemporalSsm> {
    spec.validate()?;
    let d = spec.order()?;
    let gamma = spec.gamma();

    let mut f = DMatrix::<f64>::zeros(d, d);
    for i in 0..d - 1 {
        f[(i, i + 1)] = 1.0;
    }
    // companion row: -a_i gamma^(D - i + 1), a_i = binom(D, i - 1)
    for i in 0..d {
        f[(d - 1, i)] = -binomial(d, i) * gamma.powi((d - i) as i32);
    }
    let mut g = DMatrix::<f64>::zeros(d, 1);
    g[(d - 1, 0)] = 1.0;

    let q = factorial(d - 1).powi(2) / factorial(2 * d - 2) * (2.0 * gamma).powi(2 * d as i32 - 1);
    let mut h = DMatrix::<f64>::zeros(1, d);
    h[(0, 0)] = q.sqrt();

    let p_inf = solve_lyapunov(&f, &(&g * g.transpose()))?;
    Ok(TemporalSsm { d, f, g, h, p_inf, gamma, q })
}

/// Solve `F P + P F^T = -W` through the Kronecker-sum linear system.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if !f.is_square() || w.shape() != (n, n) {
        return Err(Error::contract("lyapunov: dimension mismatch"));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(F P) = (I ⊗ F) vec(P), vec(P F^T) = (F ⊗ I) vec(P)
    let sys = eye.kronecker(f) + f.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, w.as_slice());
    let lu = sys.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("lyapunov system is singular (F not Hurwitz)"))?;
    let mut p = DMatrix::from_column_slice(n, n, sol.as_slice());
    symmetrize(&mut p);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("lyapunov solution is not finite"));
    }
    Ok(p)
}

/// Matrix exponential by scaling and squaring around a Taylor core.
pub fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert!(m.is_square(), "matrix_exp of a non-square matrix");
    if n == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].exp());
    }
    let norm = m.iter().map(|v| v.abs()).fold(0.0, f64::max) * n as f64;
    let mut squarings = 0;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
    }
    let scaled = m / 2f64.powi(squarings);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut result = eye.clone();
    let mut term = eye;
    for k in 1..=18 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Discretize the SSM for a step `dt >= 0`.
///
/// `Q` is symmetrized and eigenvalues in `[-1e-12 |P|, 0)` are clamped to
/// zero; anything more negative is reported as a numerical error.
pub fn discretize(ssm: &TemporalSsm, dt: f64) -> Result<DiscreteTransition> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::contract(format!("step size must be >= 0, got {dt}")));
    }
    let d = ssm.d;
    if dt == 0.0 {
        return Ok(DiscreteTransition {
            a: DMatrix::identity(d, d),
            q: DMatrix::zeros(d, d),
            dt,
        });
    }
    let a = matrix_exp(&(&ssm.f * dt));
    let mut q = &ssm.p_inf - &a * &ssm.p_inf * a.transpose();
    symmetrize(&mut q);

    let scale = ssm.p_inf.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let eig = q.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-12 * scale {
        return Err(Error::numerical(format!(
            "discrete process noise is indefinite (min eigenvalue {min_eig:e})"
        )));
    }
    if min_eig < 0.0 {
        let mut lam = eig.eigenvalues.clone();
        lam.iter_mut().for_each(|v| *v = v.max(0.0));
        let v = &eig.eigenvectors;
        q = v * DMatrix::from_diagonal(&lam) * v.transpose();
        symmetrize(&mut q);
    }
    Ok(DiscreteTransition { a, q, dt })
}

impl TemporalSsm {
    /// `H exp(tau F) P_inf H^T`, the covariance realized by the SSM.
    pub fn implied_cov(&self, tau: f64) -> f64 {
        let a = matrix_exp(&(&self.f * tau.abs()));
        (&self.h * a * &self.p_inf * self.h.transpose())[(0, 0)]
    }
}
