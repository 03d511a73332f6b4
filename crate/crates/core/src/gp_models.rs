//! Spatial kernel and batch GP regressors.
//!
//! [`ExactGp`] conditions on all data with the separable space-time kernel
//! `k_s(z, z') * k_t(t - t')`. It is cubic in the number of points and is
//! used as the reference oracle and as the subset-of-data baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize};
use crate::temporal_ssm::{matern_cov, TemporalKernelSpec};

/// Default cap on the number of points the exact GP accepts.
pub const DEFAULT_ORACLE_CAP: usize = 2000;

/// Squared-exponential kernel with per-dimension lengthscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialKernelSpec {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl SpatialKernelSpec {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        let spec = Self { signal_variance, lengthscales };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::config("signal variance must be positive"));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::config("spatial kernel needs at least one lengthscale"));
        }
        if self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(Error::config("lengthscales must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    #[inline]
    fn eval_rows(&self, z1: &DMatrix<f64>, i: usize, z2: &DMatrix<f64>, j: usize) -> f64 {
        let mut s = 0.0;
        for (d, l) in self.lengthscales.iter().enumerate() {
            let r = (z1[(i, d)] - z2[(j, d)]) / l;
            s += r * r;
        }
        self.signal_variance * (-0.5 * s).exp()
    }
}

/// Gram matrix `[K]_ij = k_s(z1_i, z2_j)`.
///
/// Panics if the column counts differ from the kernel dimension.
pub fn rbf_kernel(z1: &DMatrix<f64>, z2: &DMatrix<f64>, spec: &SpatialKernelSpec) -> DMatrix<f64> {
    assert_eq!(z1.ncols(), spec.dim(), "rbf_kernel: z1 has wrong feature dimension");
    assert_eq!(z2.ncols(), spec.dim(), "rbf_kernel: z2 has wrong feature dimension");
    let mut k = DMatrix::<f64>::zeros(z1.nrows(), z2.nrows());
    for j in 0..z2.nrows() {
        for i in 0..z1.nrows() {
            k[(i, j)] = spec.eval_rows(z1, i, z2, j);
        }
    }
    k
}

/// Gradient of `k_s(z, v_j)` with respect to `z` for every row `v_j` of `v`.
///
/// Returns a `rows(v) x dim` matrix; row `j` is `-k(z, v_j) (z - v_j) / l^2`.
pub fn rbf_gradient(z: &[f64], v: &DMatrix<f64>, spec: &SpatialKernelSpec) -> DMatrix<f64> {
    let dim = spec.dim();
    assert_eq!(z.len(), dim);
    let mut out = DMatrix::<f64>::zeros(v.nrows(), dim);
    for j in 0..v.nrows() {
        let mut s = 0.0;
        for d in 0..dim {
            let r = (z[d] - v[(j, d)]) / spec.lengthscales[d];
            s += r * r;
        }
        let k = spec.signal_variance * (-0.5 * s).exp();
        for d in 0..dim {
            let l2 = spec.lengthscales[d] * spec.lengthscales[d];
            out[(j, d)] = -k * (z[d] - v[(j, d)]) / l2;
        }
    }
    out
}

/// Training data for the batch GP.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub z: DMatrix<f64>,
    pub t: Vec<f64>,
    pub y: DMatrix<f64>,
    pub noise_variance: Vec<f64>,
}

impl Dataset {
    pub fn new(z: DMatrix<f64>, t: Vec<f64>, y: DMatrix<f64>, noise_variance: Vec<f64>) -> Result<Self> {
        let data = Self { z, t, y, noise_variance };
        data.validate()?;
        Ok(data)
    }

    pub fn empty(n_z: usize, noise_variance: Vec<f64>) -> Self {
        let n_g = noise_variance.len();
        Self {
            z: DMatrix::zeros(0, n_z),
            t: Vec::new(),
            y: DMatrix::zeros(0, n_g),
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.z.nrows();
        if self.t.len() != n || self.y.nrows() != n {
            return Err(Error::contract(format!(
                "dataset row counts disagree: z {}, t {}, y {}",
                n,
                self.t.len(),
                self.y.nrows()
            )));
        }
        if self.noise_variance.len() != self.y.ncols() {
            return Err(Error::contract("one noise variance per output is required"));
        }
        if self.t.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::contract("timestamps must be nondecreasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    /// Append one observation row.
    pub fn push(&mut self, z: &[f64], t: f64, y: &[f64]) -> Result<()> {
        if z.len() != self.z.ncols() || y.len() != self.y.ncols() {
            return Err(Error::contract("row has the wrong dimension"));
        }
        if let Some(last) = self.t.last() {
            if t < *last {
                return Err(Error::contract("timestamps must be nondecreasing"));
            }
        }
        let n = self.len();
        self.z = std::mem::replace(&mut self.z, DMatrix::zeros(0, 0)).insert_row(n, 0.0);
        self.y = std::mem::replace(&mut self.y, DMatrix::zeros(0, 0)).insert_row(n, 0.0);
        for (d, v) in z.iter().enumerate() {
            self.z[(n, d)] = *v;
        }
        for (g, v) in y.iter().enumerate() {
            self.y[(n, g)] = *v;
        }
        self.t.push(t);
        Ok(())
    }

    fn rows(&self, start: usize) -> Dataset {
        let n = self.len() - start;
        Dataset {
            z: self.z.rows(start, n).into_owned(),
            t: self.t[start..].to_vec(),
            y: self.y.rows(start, n).into_owned(),
            noise_variance: self.noise_variance.clone(),
        }
    }
}

/// Subset of data: keep the `budget` most recent rows.
pub fn sod_truncate(data: &Dataset, budget: usize) -> Dataset {
    assert!(budget >= 1, "SoD budget must be positive");
    let n = data.len();
    data.rows(n.saturating_sub(budget))
}

/// Posterior at a set of query points.
///
/// `mean` is `N x n_g`; `cov[g]` is the `N x N` covariance of output `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub mean: DMatrix<f64>,
    pub cov: Vec<DMatrix<f64>>,
}

impl GpPosterior {
    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Marginal variance of output `g` at query `i`.
    pub fn variance(&self, i: usize, g: usize) -> f64 {
        self.cov[g][(i, i)]
    }
}

/// Separable space-time Gram matrix between two point sets.
pub fn spacetime_kernel(
    z1: &DMatrix<f64>,
    t1: &[f64],
    z2: &DMatrix<f64>,
    t2: &[f64],
    k_s: &SpatialKernelSpec,
    k_t: &TemporalKernelSpec,
) -> Result<DMatrix<f64>> {
    let mut k = rbf_kernel(z1, z2, k_s);
    for j in 0..t2.len() {
        for i in 0..t1.len() {
            k[(i, j)] *= matern_cov(t1[i] - t2[j], k_t)?;
        }
    }
    Ok(k)
}

/// Factorized block of outputs sharing one noise level.
#[derive(Debug, Clone)]
struct OutputGroup {
    outputs: Vec<usize>,
    chol: DMatrix<f64>,
    /// `(K + s I)^{-1} y` for the grouped outputs, `N x |outputs|`.
    alpha: DMatrix<f64>,
}

/// Exact GP conditioned on a [`Dataset`] with the separable kernel.
#[derive(Debug, Clone)]
pub struct ExactGp {
    data: Dataset,
    k_s: SpatialKernelSpec,
    k_t: TemporalKernelSpec,
    groups: Vec<OutputGroup>,
}

/// Group output indices by identical noise variance, preserving first-seen order.
pub(crate) fn group_by_noise(noise: &[f64]) -> Vec<(f64, Vec<usize>)> {
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (g, &s) in noise.iter().enumerate() {
        match groups.iter_mut().find(|(v, _)| *v == s) {
            Some((_, members)) => members.push(g),
            None => groups.push((s, vec![g])),
        }
    }
    groups
}

impl ExactGp {
    pub fn fit(data: Dataset, k_s: SpatialKernelSpec, k_t: TemporalKernelSpec) -> Result<Self> {
        Self::fit_capped(data, k_s, k_t, DEFAULT_ORACLE_CAP)
    }

    pub fn fit_capped(
        data: Dataset,
        k_s: SpatialKernelSpec,
        k_t: TemporalKernelSpec,
        cap: usize,
    ) -> Result<Self> {
        data.validate()?;
        k_s.validate()?;
        k_t.validate()?;
        if data.len() > cap {
            return Err(Error::contract(format!(
                "exact GP limited to {cap} points, got {}",
                data.len()
            )));
        }
        if data.z.ncols() != k_s.dim() {
            return Err(Error::contract("dataset feature dimension does not match kernel"));
        }
        if data.noise_variance.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("noise variance must be positive"));
        }
        let mut groups = Vec::new();
        if !data.is_empty() {
            let gram = spacetime_kernel(&data.z, &data.t, &data.z, &data.t, &k_s, &k_t)?;
            for (noise, outputs) in group_by_noise(&data.noise_variance) {
                let mut k = gram.clone();
                for i in 0..k.nrows() {
                    k[(i, i)] += noise;
                }
                let (chol, _) = cholesky_jittered(&k, k_s.signal_variance)?;
                let mut y = DMatrix::<f64>::zeros(data.len(), outputs.len());
                for (c, &g) in outputs.iter().enumerate() {
                    y.set_column(c, &data.y.column(g));
                }
                let alpha = crate::linalg::cholesky_solve(&chol, &y);
                groups.push(OutputGroup { outputs, chol, alpha });
            }
        }
        Ok(Self { data, k_s, k_t, groups })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// Conditions on one more observation by extending each Cholesky factor
    /// by a row, `O(N²)`. Fails with a numerical error when the new pivot is
    /// not positive; refit in that case.
    pub fn push(&mut self, z: &[f64], t: f64, y: &[f64]) -> Result<()> {
        if self.data.len() >= DEFAULT_ORACLE_CAP {
            return Err(Error::contract(format!("exact GP limited to {DEFAULT_ORACLE_CAP} points")));
        }
        if self.data.is_empty() {
            let mut data = self.data.clone();
            data.push(z, t, y)?;
            *self = Self::fit(data, self.k_s.clone(), self.k_t)?;
            return Ok(());
        }
        let zq = row(z);
        let k_new = spacetime_kernel(&zq, &[t], &self.data.z, &self.data.t, &self.k_s, &self.k_t)?;
        let k_self = spacetime_kernel(&zq, &[t], &zq, &[t], &self.k_s, &self.k_t)?[(0, 0)];
        let n = self.data.len();
        let mut extended = Vec::with_capacity(self.groups.len());
        for group in &self.groups {
            let noise = self.data.noise_variance[group.outputs[0]];
            let mut l = k_new.transpose();
            group.chol.solve_lower_triangular_mut(&mut l);
            let pivot = k_self + noise - l.norm_squared();
            if !(pivot > 0.0) {
                return Err(Error::numerical("Cholesky append lost positive definiteness"));
            }
            let mut chol = group.chol.clone().insert_row(n, 0.0).insert_column(n, 0.0);
            chol.view_mut((n, 0), (1, n)).copy_from(&l.transpose());
            chol[(n, n)] = pivot.sqrt();
            extended.push(chol);
        }
        self.data.push(z, t, y)?;
        for (group, chol) in self.groups.iter_mut().zip(extended) {
            let mut yg = DMatrix::<f64>::zeros(n + 1, group.outputs.len());
            for (c, &g) in group.outputs.iter().enumerate() {
                yg.set_column(c, &self.data.y.column(g));
            }
            group.alpha = crate::linalg::cholesky_solve(&chol, &yg);
            group.chol = chol;
        }
        Ok(())
    }

    pub fn predict(&self, query_z: &DMatrix<f64>, query_t: &[f64]) -> Result<GpPosterior> {
        if query_z.nrows() != query_t.len() {
            return Err(Error::contract("query rows and timestamps disagree"));
        }
        let n_g = self.data.n_outputs();
        let nq = query_z.nrows();
        let mut prior = spacetime_kernel(query_z, query_t, query_z, query_t, &self.k_s, &self.k_t)?;
        symmetrize(&mut prior);
        if self.data.is_empty() {
            return Ok(GpPosterior {
                mean: DMatrix::zeros(nq, n_g),
                cov: vec![prior; n_g],
            });
        }
        let k_qx = spacetime_kernel(query_z, query_t, &self.data.z, &self.data.t, &self.k_s, &self.k_t)?;
        let mut mean = DMatrix::<f64>::zeros(nq, n_g);
        let mut cov = vec![DMatrix::<f64>::zeros(0, 0); n_g];
        for group in &self.groups {
            let m = &k_qx * &group.alpha;
            let mut v = k_qx.transpose();
            group.chol.solve_lower_triangular_mut(&mut v);
            let mut c = &prior - v.transpose() * &v;
            symmetrize(&mut c);
            for (col, &g) in group.outputs.iter().enumerate() {
                mean.set_column(g, &m.column(col));
                cov[g] = c.clone();
            }
        }
        Ok(GpPosterior { mean, cov })
    }

    /// Posterior mean Jacobians `n_g x n_z`, one per query.
    pub fn mean_jacobians(&self, query_z: &DMatrix<f64>, query_t: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let n_g = self.data.n_outputs();
        let dim = self.k_s.dim();
        let mut out = Vec::with_capacity(query_z.nrows());
        for q in 0..query_z.nrows() {
            let mut jac = DMatrix::<f64>::zeros(n_g, dim);
            if !self.data.is_empty() {
                let z: Vec<f64> = query_z.row(q).iter().cloned().collect();
                let mut grad = rbf_gradient(&z, &self.data.z, &self.k_s);
                for j in 0..self.data.len() {
                    let kt = matern_cov(query_t[q] - self.data.t[j], &self.k_t)?;
                    grad.row_mut(j).scale_mut(kt);
                }
                for group in &self.groups {
                    let jg = group.alpha.transpose() * &grad;
                    for (row, &g) in group.outputs.iter().enumerate() {
                        jac.set_row(g, &jg.row(row));
                    }
                }
            }
            out.push(jac);
        }
        Ok(out)
    }
}

/// One-shot exact posterior of the separable space-time GP.
pub fn exact_stgp_predict(
    data: &Dataset,
    query_z: &DMatrix<f64>,
    query_t: &[f64],
    k_s: &SpatialKernelSpec,
    k_t: &TemporalKernelSpec,
) -> Result<GpPosterior> {
    ExactGp::fit(data.clone(), k_s.clone(), *k_t)?.predict(query_z, query_t)
}

/// Convenience: a single query row as a `1 x n` matrix.
pub fn row(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}

pub fn column(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}
