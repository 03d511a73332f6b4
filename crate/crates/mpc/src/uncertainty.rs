//! Gaussian uncertainty propagation and chance-constraint tightening.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::contract(format!("probability {p} outside (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// `Σ_{i+1} = A_i Σ_i A_iᵀ + B Σ_g,i Bᵀ + Σ_w` from `Σ_0 = 0`.
///
/// `a[i]` is the linearized mean dynamics (nominal plus residual-mean
/// Jacobian) and `sigma_g[i]` the residual covariance at stage `i`.
pub fn propagate_covariance(
    a: &[DMatrix<f64>],
    sigma_g: &[DMatrix<f64>],
    b: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    if a.len() != sigma_g.len() {
        return Err(Error::contract("one residual covariance per stage is required"));
    }
    let n = b.nrows();
    let mut out = Vec::with_capacity(a.len() + 1);
    out.push(DMatrix::zeros(n, n));
    for (ai, sg) in a.iter().zip(sigma_g) {
        if ai.iter().chain(sg.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite Jacobian or residual covariance"));
        }
        let prev = out.last().expect("seeded with Σ_0");
        let mut next = ai * prev * ai.transpose() + b * sg * b.transpose() + sigma_w;
        next = (&next + next.transpose()) * 0.5;
        out.push(next);
    }
    Ok(out)
}

/// Back-off `α √(cᵀ Σ c)` with the root clamped at zero.
pub fn tightening(alpha: f64, grad: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    alpha * grad.dot(&(sigma * grad)).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::Continuous;

    #[test]
    fn quantile_examples() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        assert!((inverse_normal_cdf(0.975).unwrap() - 1.959963984540054).abs() < 1e-9);
        assert!((inverse_normal_cdf(0.8413447).unwrap() - 1.0).abs() < 1e-4);
        assert!(inverse_normal_cdf(1.0).is_err());
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let n = Normal::standard();
        for p in [1e-8, 0.01, 0.2, 0.6, 0.9, 0.999, 1.0 - 1e-9] {
            let a = inverse_normal_cdf(p).unwrap();
            // first-order quantile error |ΔΦ| / φ(α)
            let err = (n.cdf(a) - p).abs() / n.pdf(a);
            assert!(err <= 1e-9, "p = {p}: error {err}");
        }
    }

    #[test]
    fn additive_noise_accumulates() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let a = vec![eye.clone(); 5];
        let sg = vec![DMatrix::zeros(1, 1); 5];
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sig = propagate_covariance(&a, &sg, &b, &(&eye * 0.3)).unwrap();
        for (i, s) in sig.iter().enumerate() {
            assert!((s - &eye * (0.3 * i as f64)).amax() < 1e-15);
        }
    }

    #[test]
    fn first_step_is_residual_plus_process_noise() {
        let a = vec![DMatrix::from_element(2, 2, 7.0)];
        let sg = vec![DMatrix::from_element(1, 1, 0.5)];
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let w = DMatrix::from_diagonal_element(2, 2, 0.1);
        let sig = propagate_covariance(&a, &sg, &b, &w).unwrap();
        assert!((&sig[1] - (&b * &sg[0] * b.transpose() + &w)).amax() < 1e-15);
    }

    #[test]
    fn scalar_lyapunov_limit() {
        let a = vec![DMatrix::from_element(1, 1, 0.9); 400];
        let sg = vec![DMatrix::zeros(1, 1); 400];
        let b = DMatrix::from_element(1, 1, 1.0);
        let sig = propagate_covariance(&a, &sg, &b, &DMatrix::from_element(1, 1, 0.19)).unwrap();
        assert!((sig[400][(0, 0)] - 0.19 / (1.0 - 0.81)).abs() < 1e-12);
    }

    #[test]
    fn tightening_examples() {
        let g = DVector::from_element(1, 1.0);
        let alpha = inverse_normal_cdf(0.975).unwrap();
        let beta = tightening(alpha, &g, &DMatrix::from_element(1, 1, 4.0));
        assert!((beta - 3.919928).abs() < 1e-6);
        assert_eq!(tightening(alpha, &g, &DMatrix::zeros(1, 1)), 0.0);
        assert_eq!(tightening(0.0, &g, &DMatrix::from_element(1, 1, 4.0)), 0.0);
        // negative round-off clamps to zero
        assert_eq!(tightening(alpha, &g, &DMatrix::from_element(1, 1, -1e-18)), 0.0);
    }
}
