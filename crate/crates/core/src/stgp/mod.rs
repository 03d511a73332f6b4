//! Approximate spatio-temporal GP with constant-cost online learning.
//!
//! The latent function at the `M` inducing locations is driven by the
//! temporal SSM, giving an `M * D` dimensional linear-Gaussian state
//! `v̄ ~ N(μ, Σ)`. The covariance is only ever stored as a lower
//! triangular root.
//!
//! ```text
//! predict:  μ ← Ā μ              Σ^½ ← tria([Ā Σ^½ | Q̄^½])
//! measure:  C̄ = K_ZV K_VV⁻¹ H̄     R = K_ZZ − Q_ZZ + σ²I
//!           whiten by R^½, then per row c:
//!           tria([1, c Σ^½; 0, Σ^½]) = [s, 0; k, Σ^½⁺]
//!           μ ← μ + k (y − c μ) / s
//! ```
//!
//! `Ā = I_M ⊗ A` is block diagonal and is applied block by block. Both
//! factors of the predict step are (block) lower triangular, and the
//! measurement array is reduced by Givens rotations that keep the root
//! triangular, so no dense QR is needed.

mod model;
pub mod placement;
mod serde_repr;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp_models::{rbf_gradient, rbf_kernel, GpPosterior, SpatialKernelSpec};
use crate::linalg::{
    cholesky_jittered, cholesky_solve, lower_inverse, merge_lower_roots, psd_root, retriangularize_blocks,
    symmetrize,
};
use crate::temporal_ssm::{build_ssm, discretize, DiscreteTransition, TemporalKernelSpec, TemporalSsm};

pub use model::{Checkpoint, FilterGroup, StgpModel};

/// Everything needed to build the model; fixed for its lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducingConfig {
    /// `M x n_z` inducing locations, one per row.
    #[serde(with = "serde_repr::matrix_rows")]
    pub inducing: DMatrix<f64>,
    pub spatial: SpatialKernelSpec,
    pub temporal: TemporalKernelSpec,
    /// Observation noise variance per output.
    pub noise_variance: Vec<f64>,
    /// Step between consecutive updates (seconds); zero gives a static GP.
    pub dt: f64,
    pub n_outputs: usize,
}

impl InducingConfig {
    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        self.temporal.validate()?;
        let m = self.inducing.nrows();
        if m == 0 {
            return Err(Error::config("at least one inducing point is required"));
        }
        if self.inducing.ncols() != self.spatial.dim() {
            return Err(Error::config(format!(
                "inducing points have {} features, kernel expects {}",
                self.inducing.ncols(),
                self.spatial.dim()
            )));
        }
        if self.inducing.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("inducing locations must be finite"));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if self.inducing.row(i) == self.inducing.row(j) {
                    return Err(Error::config(format!("duplicate inducing points {i} and {j}")));
                }
            }
        }
        if !(self.dt >= 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt must be >= 0"));
        }
        if self.n_outputs == 0 || self.noise_variance.len() != self.n_outputs {
            return Err(Error::config("need one noise variance per output"));
        }
        if self.noise_variance.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::config("noise variances must be positive"));
        }
        Ok(())
    }

    pub fn n_inducing(&self) -> usize {
        self.inducing.nrows()
    }
}

/// Quantities that never change after initialization.
#[derive(Debug, Clone)]
pub struct StgpCache {
    pub ssm: TemporalSsm,
    pub transition: DiscreteTransition,
    pub inducing: DMatrix<f64>,
    pub spatial: SpatialKernelSpec,
    /// `K_VV` including the jitter that made it factorizable.
    pub kvv: DMatrix<f64>,
    pub kvv_jitter: f64,
    /// Lower Cholesky factor of `K_VV` and its inverse.
    pub kvv_root: DMatrix<f64>,
    pub kvv_root_inv: DMatrix<f64>,
    /// `I_M ⊗ H`, `M x Md`.
    pub h_bar: DMatrix<f64>,
    /// `K_VV ⊗ Q` and its lower root `K_VV^½ ⊗ chol(Q)`.
    pub q_bar: DMatrix<f64>,
    pub q_bar_root: DMatrix<f64>,
    /// False for the static model, whose `Q̄` is zero.
    pub has_process_noise: bool,
    /// `K_VV^{-½} H̄`.
    pub l: DMatrix<f64>,
    pub p_inf_root: DMatrix<f64>,
    pub dt: f64,
}

impl StgpCache {
    pub fn new(config: &InducingConfig) -> Result<Self> {
        config.validate()?;
        let ssm = build_ssm(&config.temporal)?;
        let transition = discretize(&ssm, config.dt)?;
        let m = config.n_inducing();

        let kvv_raw = rbf_kernel(&config.inducing, &config.inducing, &config.spatial);
        let (kvv_root, kvv_jitter) = cholesky_jittered(&kvv_raw, config.spatial.signal_variance)
            .map_err(|e| {
                Error::config(format!("inducing Gram matrix is singular (near-duplicate points?): {e}"))
            })?;
        let mut kvv = kvv_raw;
        for i in 0..m {
            kvv[(i, i)] += kvv_jitter;
        }
        let kvv_root_inv = lower_inverse(&kvv_root)?;
        let eye_m = DMatrix::<f64>::identity(m, m);
        let h_bar = eye_m.kronecker(&ssm.h);
        let q_bar = kvv.kronecker(&transition.q);
        let q_bar_root = kvv_root.kronecker(&psd_root(&transition.q));
        let l = &kvv_root_inv * &h_bar;
        let p_inf_root = psd_root(&ssm.p_inf);

        Ok(Self {
            ssm,
            transition,
            inducing: config.inducing.clone(),
            spatial: config.spatial.clone(),
            kvv,
            kvv_jitter,
            kvv_root,
            kvv_root_inv,
            h_bar,
            q_bar,
            has_process_noise: q_bar_root.iter().any(|v| *v != 0.0),
            q_bar_root,
            l,
            p_inf_root,
            dt: config.dt,
        })
    }

    pub fn n_inducing(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.n_inducing() * self.ssm.d
    }

    /// Dense `I_M ⊗ A`. Only used for inspection; updates apply it blockwise.
    pub fn a_bar(&self) -> DMatrix<f64> {
        DMatrix::<f64>::identity(self.n_inducing(), self.n_inducing()).kronecker(&self.transition.a)
    }

    /// `x ← Ā x`.
    fn apply_a_bar(&self, x: &mut DMatrix<f64>) {
        let d = self.ssm.d;
        if d == 1 {
            let a = self.transition.a[(0, 0)];
            if a != 1.0 {
                x.scale_mut(a);
            }
            return;
        }
        let a = &self.transition.a;
        let mut tmp = vec![0.0; d];
        for c in 0..x.ncols() {
            for b in 0..self.n_inducing() {
                let base = b * d;
                for (i, slot) in tmp.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += a[(i, k)] * x[(base + k, c)];
                    }
                    *slot = s;
                }
                for (i, v) in tmp.iter().enumerate() {
                    x[(base + i, c)] = *v;
                }
            }
        }
    }

    /// `Q_ZZ^root = K_ZV (K_VV^½)^{-T}`; `Q_ZZ = root rootᵀ`.
    fn q_root(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        rbf_kernel(z, &self.inducing, &self.spatial) * self.kvv_root_inv.transpose()
    }
}

/// Filter state for outputs sharing one noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_repr::StateRepr", into = "serde_repr::StateRepr")]
pub struct StgpState {
    /// `Md x n_g` stacked inducing-state means.
    pub mu: DMatrix<f64>,
    /// `Md x Md` lower-triangular covariance root.
    pub sigma_root: DMatrix<f64>,
    /// Model time of the last update.
    pub now: f64,
    /// Observations absorbed so far.
    pub count: u64,
}

impl StgpState {
    /// Prior: `μ = 0`, `Σ^½ = K_VV^½ ⊗ chol(P_inf)`.
    pub fn prior(cache: &StgpCache, n_outputs: usize) -> Self {
        Self {
            mu: DMatrix::zeros(cache.state_dim(), n_outputs),
            sigma_root: cache.kvv_root.kronecker(&cache.p_inf_root),
            now: 0.0,
            count: 0,
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma_root * self.sigma_root.transpose()
    }
}

/// A batch of residual observations taken at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// `n_y x n_z`.
    pub z: DMatrix<f64>,
    /// `n_y x n_g`.
    pub y: DMatrix<f64>,
}

impl TrainingBatch {
    pub fn new(z: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if z.nrows() == 0 || z.nrows() != y.nrows() {
            return Err(Error::contract("batch needs n_y >= 1 rows in both z and y"));
        }
        if z.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::contract("batch contains non-finite values"));
        }
        Ok(Self { z, y })
    }

    pub fn single(z: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(
            DMatrix::from_row_slice(1, z.len(), z),
            DMatrix::from_row_slice(1, y.len(), y),
        )
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Initialize cache and prior state. All outputs must share one noise level;
/// use [`StgpModel`] otherwise.
pub fn init(config: &InducingConfig) -> Result<(StgpCache, StgpState)> {
    let cache = StgpCache::new(config)?;
    if config.noise_variance.iter().any(|s| *s != config.noise_variance[0]) {
        return Err(Error::config(
            "outputs have different noise levels; use StgpModel for independent filters",
        ));
    }
    let state = StgpState::prior(&cache, config.n_outputs);
    Ok((cache, state))
}

fn cholesky_plain_then_jitter(a: &DMatrix<f64>, scale: f64) -> Result<DMatrix<f64>> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.unpack()),
        None => cholesky_jittered(a, scale).map(|(l, _)| l),
    }
}

/// Advance the state by one step and absorb `batch` if present.
///
/// `noise_variance` is the observation noise shared by the state's outputs.
pub fn update(
    state: &mut StgpState,
    cache: &StgpCache,
    batch: Option<&TrainingBatch>,
    noise_variance: f64,
) -> Result<()> {
    let md = cache.state_dim();
    if state.sigma_root.shape() != (md, md) || state.mu.nrows() != md {
        return Err(Error::contract("state does not belong to this cache"));
    }

    if let Some(batch) = batch {
        if batch.z.ncols() != cache.spatial.dim() {
            return Err(Error::contract("batch feature dimension does not match the kernel"));
        }
        if batch.y.ncols() != state.mu.ncols() {
            return Err(Error::contract("batch output dimension does not match the state"));
        }
        if batch.z.iter().chain(batch.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::contract("batch contains non-finite values"));
        }
    }

    cache.apply_a_bar(&mut state.mu);
    let mut root = state.sigma_root.clone();
    cache.apply_a_bar(&mut root);
    retriangularize_blocks(&mut root, cache.ssm.d);
    if cache.has_process_noise {
        root = merge_lower_roots(&root, &cache.q_bar_root);
    }

    if let Some(batch) = batch {
        let n_y = batch.len();
        let kzz = rbf_kernel(&batch.z, &batch.z, &cache.spatial);
        let qzz_root = cache.q_root(&batch.z);
        let mut r = &kzz - &qzz_root * qzz_root.transpose();
        for i in 0..n_y {
            r[(i, i)] += noise_variance;
        }
        symmetrize(&mut r);
        let r_root = cholesky_plain_then_jitter(&r, cache.spatial.signal_variance)?;

        // whitened rows are independent unit-noise scalar observations
        let mut c_w = &qzz_root * &cache.l;
        let mut y_w = batch.y.clone();
        if !r_root.solve_lower_triangular_mut(&mut c_w) || !r_root.solve_lower_triangular_mut(&mut y_w) {
            return Err(Error::numerical("singular observation noise root"));
        }
        for j in 0..n_y {
            absorb_scalar(&mut state.mu, &mut root, &c_w.row(j).transpose(), &y_w.row(j).transpose());
        }
        state.count += n_y as u64;
    }

    state.sigma_root = root;
    state.now += cache.dt;
    if state.mu.iter().chain(state.sigma_root.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("filter state became non-finite"));
    }
    Ok(())
}

/// Measurement update with one unit-noise observation `y = c v̄ + ε`.
///
/// Givens rotations of the array `[1, c L; 0, L]` from the last column
/// to the first zero `c L` while `L` stays lower triangular.
fn absorb_scalar(mu: &mut DMatrix<f64>, l: &mut DMatrix<f64>, c: &DVector<f64>, y: &DVector<f64>) {
    let n = l.nrows();
    let innovation: Vec<f64> = (0..mu.ncols()).map(|g| y[g] - c.dot(&mu.column(g))).collect();
    let mut pivot: f64 = 1.0;
    let mut gain = vec![0.0; n];
    let data = l.as_mut_slice();
    for j in (0..n).rev() {
        let col = &mut data[j * n..(j + 1) * n];
        let a: f64 = c.as_slice()[j..].iter().zip(&col[j..]).map(|(p, q)| p * q).sum();
        if a == 0.0 {
            continue;
        }
        let r = pivot.hypot(a);
        let (cs, sn) = (pivot / r, a / r);
        pivot = r;
        for (g, v) in gain[j..].iter_mut().zip(&mut col[j..]) {
            let (kg, lv) = (*g, *v);
            *g = cs * kg + sn * lv;
            *v = cs * lv - sn * kg;
        }
    }
    for (g, e) in innovation.iter().enumerate() {
        let step = e / pivot;
        for (m, k) in mu.column_mut(g).iter_mut().zip(&gain) {
            *m += k * step;
        }
    }
}

/// Per-stage propagation shared by [`evaluate`] and the Jacobian variant.
///
/// Since `Ā (K_VV ⊗ Q_k) Āᵀ = K_VV ⊗ (A Q_k Aᵀ)`, the predicted covariance
/// at stage `k` is `Ā^k Σ Ā^kᵀ + K_VV ⊗ Q_k` with the `D x D` recursion
/// `Q_k = A Q_{k-1} Aᵀ + Q`. Each stage then costs one row times the root.
fn evaluate_impl(
    state: &StgpState,
    cache: &StgpCache,
    z: &DMatrix<f64>,
    want_jacobian: bool,
) -> Result<(GpPosterior, Vec<DMatrix<f64>>)> {
    let n = z.nrows();
    if n == 0 {
        return Err(Error::contract("evaluate needs at least one stage"));
    }
    if z.ncols() != cache.spatial.dim() {
        return Err(Error::contract("query feature dimension does not match the kernel"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("query contains non-finite values"));
    }
    let n_g = state.mu.ncols();
    let m = cache.n_inducing();
    let d = cache.ssm.d;
    let a = &cache.transition.a;

    let kzz = rbf_kernel(z, z, &cache.spatial);
    let qzz_root = cache.q_root(z);
    // a_k = K_ZV K_VV^{-T/2} K_VV^{-½}, so c_k = a_k ⊗ H.
    let weights_z = &qzz_root * &cache.kvv_root_inv;

    let mut a_pow = DMatrix::<f64>::identity(d, d);
    let mut q_acc = DMatrix::<f64>::zeros(d, d);
    let mut mean = DMatrix::<f64>::zeros(n, n_g);
    let mut cov = &kzz - &qzz_root * qzz_root.transpose();
    let mut jacobians = Vec::new();
    let mut row = RowDVector::<f64>::zeros(m * d);

    for k in 0..n {
        a_pow = a * &a_pow;
        q_acc = a * &q_acc * a.transpose() + &cache.transition.q;
        let ha = &cache.ssm.h * &a_pow; // 1 x D

        // row = a_k ⊗ (H A^k)
        for j in 0..m {
            let w = weights_z[(k, j)];
            for i in 0..d {
                row[j * d + i] = w * ha[(0, i)];
            }
        }
        mean.set_row(k, &(&row * &state.mu));
        let proj = &row * &state.sigma_root;
        let q_part = qzz_root.row(k).norm_squared() * (&cache.ssm.h * &q_acc * cache.ssm.h.transpose())[(0, 0)];
        cov[(k, k)] += proj.norm_squared() + q_part;

        if want_jacobian {
            // kernel weights K_VV⁻¹ (I ⊗ H A^k) μ
            let mut f = DMatrix::<f64>::zeros(m, n_g);
            for j in 0..m {
                for g in 0..n_g {
                    let mut s = 0.0;
                    for i in 0..d {
                        s += ha[(0, i)] * state.mu[(j * d + i, g)];
                    }
                    f[(j, g)] = s;
                }
            }
            let weights = cholesky_solve(&cache.kvv_root, &f);
            let zk: Vec<f64> = z.row(k).iter().cloned().collect();
            let grad = rbf_gradient(&zk, &cache.inducing, &cache.spatial);
            jacobians.push(weights.transpose() * grad);
        }
    }

    symmetrize(&mut cov);
    Ok((GpPosterior { mean, cov: vec![cov; n_g] }, jacobians))
}

/// Evaluate the GP at `N` stages; stage `i` (1-based) is predicted at
/// model time `now + i dt`. The state is not modified.
pub fn evaluate(state: &StgpState, cache: &StgpCache, stages: &DMatrix<f64>) -> Result<GpPosterior> {
    evaluate_impl(state, cache, stages, false).map(|(p, _)| p)
}

/// Like [`evaluate`], also returning the `n_g x n_z` Jacobian of the
/// posterior mean at every stage.
pub fn evaluate_with_mean_jacobian(
    state: &StgpState,
    cache: &StgpCache,
    stages: &DMatrix<f64>,
) -> Result<(GpPosterior, Vec<DMatrix<f64>>)> {
    evaluate_impl(state, cache, stages, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_models::row;
    use crate::linalg::is_lower_triangular;
    use approx::assert_relative_eq;

    fn config(points: &[&[f64]], nu: f64, dt: f64) -> InducingConfig {
        let dim = points[0].len();
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().cloned()).collect();
        InducingConfig {
            inducing: DMatrix::from_row_slice(points.len(), dim, &flat),
            spatial: SpatialKernelSpec::new(1.3, vec![0.7; dim]).unwrap(),
            temporal: TemporalKernelSpec::new(nu, 0.8).unwrap(),
            noise_variance: vec![0.05, 0.05],
            dt,
            n_outputs: 2,
        }
    }

    #[test]
    fn cache_roots_are_inverse() {
        let (cache, _) = init(&config(&[&[0.0, 0.0], &[0.5, 0.1], &[1.0, -0.3]], 1.5, 0.1)).unwrap();
        let prod = &cache.kvv_root * &cache.kvv_root_inv;
        assert!((prod - DMatrix::<f64>::identity(3, 3)).amax() < 1e-8);
        assert!(cache.q_bar.iter().all(|v| v.is_finite()));
        assert_eq!(cache.h_bar.shape(), (3, 6));
    }

    #[test]
    fn duplicate_inducing_points_rejected() {
        let err = init(&config(&[&[0.0, 0.0], &[0.0, 0.0]], 1.5, 0.1)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn mixed_noise_needs_model() {
        let mut c = config(&[&[0.0, 0.0]], 1.5, 0.1);
        c.noise_variance = vec![0.01, 0.02];
        assert!(init(&c).is_err());
        assert_eq!(StgpModel::new(c).unwrap().groups().len(), 2);
    }

    #[test]
    fn prior_has_zero_mean_and_recovers_signal_variance() {
        let (cache, state) = init(&config(&[&[0.0, 0.0], &[0.5, 0.1], &[1.0, -0.3]], 2.5, 0.1)).unwrap();
        let post = evaluate(&state, &cache, &cache.inducing.clone()).unwrap();
        assert!(post.mean.iter().all(|v| *v == 0.0));
        for i in 0..3 {
            assert_relative_eq!(post.variance(i, 0), 1.3, epsilon = 1e-8);
        }
        let (_, jac) = evaluate_with_mean_jacobian(&state, &cache, &row(&[0.3, 0.2])).unwrap();
        assert!(jac[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scalar_prior_root() {
        let (cache, state) = init(&config(&[&[0.2]], 0.5, 0.1)).unwrap();
        let expected = (cache.kvv[(0, 0)] * cache.ssm.p_inf[(0, 0)]).sqrt();
        assert_relative_eq!(state.sigma_root[(0, 0)], expected, epsilon = 1e-14);
    }

    #[test]
    fn static_update_without_data_is_identity() {
        let (cache, mut state) = init(&config(&[&[0.0, 0.0], &[0.5, 0.1]], 1.5, 0.0)).unwrap();
        let batch = TrainingBatch::new(row(&[0.1, 0.0]), row(&[0.4, -0.2])).unwrap();
        update(&mut state, &cache, Some(&batch), 0.05).unwrap();
        let before = state.clone();
        update(&mut state, &cache, None, 0.05).unwrap();
        assert!((&state.mu - &before.mu).amax() < 1e-15);
        assert!((state.covariance() - before.covariance()).amax() < 1e-12);
        assert_eq!(state.now, 0.0);
    }

    #[test]
    fn prior_is_stationary_under_prediction() {
        let (cache, mut state) = init(&config(&[&[0.0, 0.0], &[0.5, 0.1], &[0.9, 0.4]], 1.5, 0.2)).unwrap();
        let stationary = cache.kvv.kronecker(&cache.ssm.p_inf);
        for _ in 0..5 {
            update(&mut state, &cache, None, 0.05).unwrap();
        }
        assert!((state.covariance() - stationary).amax() < 1e-10);
        assert!(is_lower_triangular(&state.sigma_root));
        assert_relative_eq!(state.now, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_case_matches_hand_rolled_kalman() {
        let (cache, mut state) = init(&config(&[&[0.2]], 0.5, 0.1)).unwrap();
        let sf2 = 1.3;
        let noise = 0.05;
        let gamma = 1.0 / 0.8;
        let a = (-gamma * 0.1f64).exp();
        let p_inf = 1.0 / (2.0 * gamma);
        let kvv = sf2 + cache.kvv_jitter;
        let c = sf2 / kvv * (2.0 * gamma).sqrt();
        let r = sf2 - sf2 * sf2 / kvv + noise;

        let mut m = 0.0;
        let mut p = kvv * p_inf;
        for k in 0..20 {
            let y = (0.3 * k as f64).sin();
            m *= a;
            p = a * a * p + kvv * p_inf * (1.0 - a * a);
            let s = c * c * p + r;
            let gain = p * c / s;
            m += gain * (y - c * m);
            p *= 1.0 - gain * c;

            let batch = TrainingBatch::new(row(&[0.2]), row(&[y, -y])).unwrap();
            update(&mut state, &cache, Some(&batch), noise).unwrap();
            assert_relative_eq!(state.mu[(0, 0)], m, epsilon = 1e-12);
            assert_relative_eq!(state.mu[(0, 1)], -m, epsilon = 1e-12);
            assert_relative_eq!(state.covariance()[(0, 0)], p, epsilon = 1e-12);
        }
        assert_eq!(state.count, 20);
    }

    #[test]
    fn shape_errors_are_contract_violations() {
        let (cache, mut state) = init(&config(&[&[0.0, 0.0]], 1.5, 0.1)).unwrap();
        let bad = TrainingBatch::new(row(&[0.1, 0.2, 0.3]), row(&[0.0, 0.0])).unwrap();
        assert!(matches!(update(&mut state, &cache, Some(&bad), 0.05), Err(Error::Contract(_))));
        assert!(TrainingBatch::new(row(&[f64::NAN, 0.0]), row(&[0.0, 0.0])).is_err());
        assert!(evaluate(&state, &cache, &DMatrix::zeros(0, 2)).is_err());
    }
}
