//! Dense reference implementations used as test and validation oracles.
//!
//! These carry the full covariance matrix and form every Kronecker product
//! explicitly. They are slow and only meant for small instances.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gp_models::rbf_kernel;
use crate::stgp::InducingConfig;
use crate::temporal_ssm::{build_ssm, discretize};

/// Conventional Kalman filter on the stacked inducing state.
#[derive(Debug, Clone)]
pub struct DenseKalman {
    pub mu: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    a_bar: DMatrix<f64>,
    q_bar: DMatrix<f64>,
    kvv: DMatrix<f64>,
    h_bar: DMatrix<f64>,
    config: InducingConfig,
}

impl DenseKalman {
    /// `kvv_jitter` is the absolute diagonal jitter the filter under test used.
    pub fn new(config: &InducingConfig, kvv_jitter: f64) -> Result<Self> {
        config.validate()?;
        let ssm = build_ssm(&config.temporal)?;
        let tr = discretize(&ssm, config.dt)?;
        let m = config.n_inducing();
        let mut kvv = rbf_kernel(&config.inducing, &config.inducing, &config.spatial);
        for i in 0..m {
            kvv[(i, i)] += kvv_jitter;
        }
        let eye = DMatrix::<f64>::identity(m, m);
        Ok(Self {
            mu: DMatrix::zeros(m * ssm.d, config.n_outputs),
            cov: kvv.kronecker(&ssm.p_inf),
            a_bar: eye.kronecker(&tr.a),
            q_bar: kvv.kronecker(&tr.q),
            h_bar: eye.kronecker(&ssm.h),
            kvv,
            config: config.clone(),
        })
    }

    /// `(C̄, K_ZZ - Q_ZZ)` for a set of query inputs.
    fn projection(&self, z: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let kzv = rbf_kernel(z, &self.config.inducing, &self.config.spatial);
        let lu = self.kvv.clone().lu();
        let kinv_kvz = lu
            .solve(&kzv.transpose())
            .ok_or_else(|| Error::numerical("reference K_VV is singular"))?;
        let c = kinv_kvz.transpose() * &self.h_bar;
        let resid = rbf_kernel(z, z, &self.config.spatial) - &kzv * kinv_kvz;
        Ok((c, resid))
    }

    /// Predict one step, then condition on `(z, y)` if given.
    pub fn step(&mut self, batch: Option<(&DMatrix<f64>, &DMatrix<f64>)>, noise: f64) -> Result<()> {
        self.mu = &self.a_bar * &self.mu;
        self.cov = &self.a_bar * &self.cov * self.a_bar.transpose() + &self.q_bar;
        if let Some((z, y)) = batch {
            let (c, resid) = self.projection(z)?;
            let r = resid + DMatrix::<f64>::identity(z.nrows(), z.nrows()) * noise;
            let s = &c * &self.cov * c.transpose() + &r;
            let pct = &self.cov * c.transpose();
            let gain = s
                .lu()
                .solve(&pct.transpose())
                .ok_or_else(|| Error::numerical("reference innovation covariance is singular"))?
                .transpose();
            self.mu += &gain * (y - &c * &self.mu);
            // Joseph form
            let n = self.cov.nrows();
            let ikc = DMatrix::<f64>::identity(n, n) - &gain * &c;
            self.cov = &ikc * &self.cov * ikc.transpose() + &gain * r * gain.transpose();
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        Ok(())
    }

    /// Stage means (`N x n_g`) and marginal variances, stage `i` one step
    /// further ahead than stage `i - 1`, starting one step after now.
    pub fn evaluate(&self, z: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let (c, resid) = self.projection(z)?;
        let mut mu = self.mu.clone();
        let mut cov = self.cov.clone();
        let mut mean = DMatrix::zeros(z.nrows(), self.mu.ncols());
        let mut var = Vec::with_capacity(z.nrows());
        for k in 0..z.nrows() {
            mu = &self.a_bar * &mu;
            cov = &self.a_bar * &cov * self.a_bar.transpose() + &self.q_bar;
            let ck = c.rows(k, 1);
            mean.set_row(k, &(ck * &mu).row(0));
            var.push(resid[(k, k)] + (ck * &cov * ck.transpose())[(0, 0)]);
        }
        Ok((mean, var))
    }
}

/// Central finite-difference Jacobian of `f: R^n -> R^m`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// `‖a - b‖_F / max(‖b‖_F, floor)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}
