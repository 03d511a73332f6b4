//! Numerical self-checks run by `validate` and by the acceptance suite.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgp_core::gp_models::{exact_stgp_predict, row};
use stgp_core::linalg::is_lower_triangular;
use stgp_core::reference::{central_difference, relative_error, DenseKalman};
use stgp_core::stgp::{self, placement};
use stgp_core::temporal_ssm::{build_ssm, matern_cov};
use stgp_core::{Dataset, InducingConfig, SpatialKernelSpec, StgpModel, TemporalKernelSpec, TrainingBatch};
use stgp_mpc::{
    rk4_next, rk4_substeps, sqp_rti_step, ConstraintRow, InteriorPoint, Linearization, LsqCost, OcpIterate,
    OcpProblem, OcpSpec, RtiOptions, ZeroModel,
};

use race_sim::vehicle::{bicycle_derivative, Bicycle, VehicleParams, N_U, N_X};
use race_sim::{run_closed_loop, LoopMode};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::variants::{build_model, Variant};

/// Outcome of one check: the worst observed deviation against its tolerance.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl Check {
    fn within(name: &'static str, worst: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name, worst, tolerance, passed: worst <= tolerance, seconds: 0.0, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} worst {:.3e} (tol {:.0e}, {:.2} s) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

fn timed(f: impl FnOnce() -> Result<Check>) -> Result<Check> {
    let tic = Instant::now();
    let mut c = f()?;
    c.seconds = tic.elapsed().as_secs_f64();
    Ok(c)
}

/// Every check, in order. Errors inside a check propagate.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<Check>> {
    Ok(vec![
        timed(kernel_ssm_equivalence)?,
        timed(oracle_equivalence)?,
        timed(square_root_vs_dense)?,
        timed(lq_matches_riccati)?,
        timed(|| median_tightening_is_nominal(config))?,
        timed(stgp_mean_jacobian)?,
        timed(|| bicycle_jacobians(&config.race.vehicle))?,
    ])
}

/// `|H exp(τF) P∞ Hᵀ − k(τ)|` over a lag grid.
pub fn kernel_ssm_equivalence() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for nu in [0.5, 1.5, 2.5] {
        for sigma_t in [0.3, 1.0, 3.0] {
            let spec = TemporalKernelSpec::new(nu, sigma_t)?;
            let ssm = build_ssm(&spec)?;
            for i in 0..=400 {
                let tau = i as f64 * 0.025 * sigma_t;
                worst = worst.max((ssm.implied_cov(tau) - matern_cov(tau, &spec)?).abs());
            }
        }
    }
    Ok(Check::within("kernel_ssm_equivalence", worst, 1e-8, "nu in {1/2,3/2,5/2}, sigma_t in {0.3,1,3}"))
}

fn small_config(m: usize, dim: usize, nu: f64, dt: f64, seed: u64) -> Result<InducingConfig> {
    Ok(InducingConfig {
        inducing: placement::latin_hypercube(&vec![-1.0; dim], &vec![1.0; dim], m, seed)?,
        spatial: SpatialKernelSpec::new(0.9, vec![0.6; dim])?,
        temporal: TemporalKernelSpec::new(nu, 0.5)?,
        noise_variance: vec![0.02; 2],
        dt,
        n_outputs: 2,
    })
}

/// With every observation at an inducing location the recursive model is
/// exact; compare against the dense spatio-temporal GP.
pub fn oracle_equivalence() -> Result<Check> {
    let dt = 1.0 / 30.0;
    let mut worst: f64 = 0.0;
    for m in [2, 5] {
        let cfg = small_config(m, 2, 1.5, dt, 21)?;
        let (cache, mut state) = stgp::init(&cfg)?;
        let mut data = Dataset::empty(2, vec![0.02; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..=40 {
            let j = rng.random_range(0..m);
            let z: Vec<f64> = cache.inducing.row(j).iter().cloned().collect();
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            stgp::update(&mut state, &cache, Some(&TrainingBatch::single(&z, &y)?), 0.02)?;
            data.push(&z, k as f64 * dt, &y)?;
        }
        let post = stgp::evaluate(&state, &cache, &cache.inducing)?;
        let times: Vec<f64> = (1..=m).map(|i| state.now + i as f64 * dt).collect();
        let exact = exact_stgp_predict(&data, &cache.inducing, &times, &cfg.spatial, &cfg.temporal)?;
        for i in 0..m {
            for g in 0..2 {
                let (a, b) = (post.mean[(i, g)], exact.mean[(i, g)]);
                worst = worst.max((a - b).abs() / b.abs().max(1e-3));
                let (a, b) = (post.variance(i, g), exact.variance(i, g));
                worst = worst.max((a - b).abs() / b);
            }
        }
    }
    Ok(Check::within("oracle_equivalence", worst, 1e-6, "M in {2,5}, 40 steps, relative"))
}

/// Square-root filter against a covariance-form Kalman filter.
pub fn square_root_vs_dense() -> Result<Check> {
    let mut worst: f64 = 0.0;
    let mut root_ok = true;
    // M·D ≤ 8
    for (m, nu) in [(8, 0.5), (4, 1.5), (2, 2.5)] {
        let cfg = small_config(m, 2, nu, 0.05, 3)?;
        let (cache, mut state) = stgp::init(&cfg)?;
        let mut dense = DenseKalman::new(&cfg, cache.kvv_jitter)?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n_y = rng.random_range(0..4);
            if n_y == 0 {
                stgp::update(&mut state, &cache, None, 0.02)?;
                dense.step(None, 0.02)?;
            } else {
                let z = DMatrix::from_fn(n_y, 2, |_, _| rng.random_range(-1.2..1.2));
                let y = DMatrix::from_fn(n_y, 2, |_, _| rng.random_range(-1.0..1.0));
                stgp::update(&mut state, &cache, Some(&TrainingBatch::new(z.clone(), y.clone())?), 0.02)?;
                dense.step(Some((&z, &y)), 0.02)?;
            }
            let r = &state.sigma_root;
            root_ok &= is_lower_triangular(r) && (0..r.nrows()).all(|i| r[(i, i)] >= 0.0);
            worst = worst.max((&state.mu - &dense.mu).amax()).max((state.covariance() - &dense.cov).amax());
        }
    }
    let mut c = Check::within("square_root_vs_dense", worst, 1e-8, "1000 steps each, M·D ≤ 8");
    if !root_ok {
        c.passed = false;
        c.detail.push_str("; root lost triangular form or a negative diagonal");
    }
    Ok(c)
}

/// Discrete linear dynamics with quadratic cost, no constraints.
struct Lq {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    p: DMatrix<f64>,
}

impl Lq {
    fn instance() -> Self {
        Self {
            a: DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.1, 0.05, -0.2, 0.95]),
            b: DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.1, 0.0, 0.02, 0.1]),
            q: DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0, 0.5])),
            r: DMatrix::from_diagonal(&DVector::from_row_slice(&[0.3, 0.1])),
            p: DMatrix::from_diagonal(&DVector::from_row_slice(&[5.0, 3.0, 1.0])),
        }
    }

    /// Finite-horizon Riccati recursion; optimal inputs from `x0`.
    fn riccati(&self, x0: &DVector<f64>, horizon: usize) -> Vec<DVector<f64>> {
        let mut p = self.p.clone();
        let mut gains = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let btp = self.b.transpose() * &p;
            let k = (&self.r + &btp * &self.b).lu().solve(&(&btp * &self.a)).expect("R + BᵀPB is positive definite");
            p = &self.q + self.a.transpose() * &p * (&self.a - &self.b * &k);
            p = (&p + p.transpose()) * 0.5;
            gains.push(k);
        }
        gains.reverse();
        let mut x = x0.clone();
        gains
            .iter()
            .map(|k| {
                let u = -(k * &x);
                x = &self.a * &x + &self.b * &u;
                u
            })
            .collect()
    }
}

impl OcpProblem for Lq {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }
    fn n_u(&self) -> usize {
        self.b.ncols()
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> Linearization {
        Linearization { next: &self.a * x + &self.b * u, a: self.a.clone(), b: self.b.clone() }
    }
    fn stage_cost(&self, _: usize, x: &DVector<f64>, u: &DVector<f64>) -> LsqCost {
        let (nx, nu) = (self.n_x(), self.n_u());
        let mut r = DVector::zeros(nx + nu);
        r.rows_mut(0, nx).copy_from(x);
        r.rows_mut(nx, nu).copy_from(u);
        let mut jx = DMatrix::zeros(nx + nu, nx);
        jx.view_mut((0, 0), (nx, nx)).fill_with_identity();
        let mut ju = DMatrix::zeros(nx + nu, nu);
        ju.view_mut((nx, 0), (nu, nu)).fill_with_identity();
        let mut w = DMatrix::zeros(nx + nu, nx + nu);
        w.view_mut((0, 0), (nx, nx)).copy_from(&self.q);
        w.view_mut((nx, nx), (nu, nu)).copy_from(&self.r);
        LsqCost { r, jx, ju, w, gx: DVector::zeros(nx), gu: DVector::zeros(nu) }
    }
    fn terminal_cost(&self, x: &DVector<f64>) -> LsqCost {
        let nx = self.n_x();
        LsqCost {
            r: x.clone(),
            jx: DMatrix::identity(nx, nx),
            ju: DMatrix::zeros(nx, self.n_u()),
            w: self.p.clone(),
            gx: DVector::zeros(nx),
            gu: DVector::zeros(self.n_u()),
        }
    }
    fn constraints(&self, _: usize, _: &DVector<f64>) -> Vec<ConstraintRow> {
        Vec::new()
    }
    fn input_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let nu = self.n_u();
        (DVector::from_element(nu, f64::NEG_INFINITY), DVector::from_element(nu, f64::INFINITY))
    }
}

/// Repeated real-time iterations on an unconstrained LQ problem reach the
/// Riccati solution.
pub fn lq_matches_riccati() -> Result<Check> {
    let lq = Lq::instance();
    let x0 = DVector::from_row_slice(&[1.0, -0.5, 0.3]);
    let horizon = 25;
    let mut b_residual = DMatrix::zeros(3, 1);
    b_residual[(2, 0)] = 1.0;
    let spec = OcpSpec {
        horizon,
        dt: 0.1,
        b_residual,
        sigma_w: DMatrix::zeros(3, 3),
        slack_penalty: 1e4,
        regularization: 0.0,
        tighten: false,
    };
    let mut it = OcpIterate::rollout(&lq, &x0, vec![DVector::zeros(2); horizon]);
    let zero = ZeroModel { n_g: 1, n_x: 3, n_u: 2 };
    for _ in 0..3 {
        sqp_rti_step(&mut it, &lq, &zero, &InteriorPoint::default(), &spec, &x0, RtiOptions { shift: false })?;
    }
    let worst = it.us.iter().zip(lq.riccati(&x0, horizon)).fold(0.0f64, |w, (u, v)| w.max((u - v).amax()));
    Ok(Check::within("lq_matches_riccati", worst, 1e-6, "horizon 25, 3 iterations"))
}

/// At `p = 0.5` an untrained stgp in the stochastic loop applies exactly
/// the nominal inputs. Reported worst is the number of differing bits.
pub fn median_tightening_is_nominal(config: &ExperimentConfig) -> Result<Check> {
    let track = config.load_track()?;
    let mut race = config.race.clone();
    race.duration = 2.0;
    race.controller.boundary_prob = 0.5;
    let dt = race.controller.dt;
    let mut zero = build_model(Variant::Nominal, &config.gp, dt, None)?;
    let mut gp = build_model(Variant::Stgp, &config.gp, dt, None)?;
    let a = run_closed_loop(&race, &track, zero.as_mut(), LoopMode::NOMINAL, config.seed)?;
    let b = run_closed_loop(&race, &track, gp.as_mut(), LoopMode { learning: false, tighten: true }, config.seed)?;
    let differing = a.records.len().abs_diff(b.records.len())
        + a.records
            .iter()
            .zip(&b.records)
            .flat_map(|(ra, rb)| ra.input.iter().zip(&rb.input))
            .filter(|(x, y)| x.to_bits() != y.to_bits())
            .count();
    Ok(Check::within("median_tightening_is_nominal", differing as f64, 0.0, format!("{} steps", a.records.len())))
}

/// Posterior-mean Jacobian of the recursive model against central differences.
pub fn stgp_mean_jacobian() -> Result<Check> {
    let mut model = StgpModel::new(small_config(10, 5, 1.5, 1.0 / 30.0, 12)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let z: DMatrix<f64> = DMatrix::from_fn(1, 5, |_, _| rng.random_range(-1.2..1.2));
        let y = DMatrix::from_fn(1, 2, |_, g| (z[(0, g)] * 2.0).sin() + z[(0, 4)]);
        model.update(Some(&TrainingBatch::new(z, y)?))?;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, jac) = model.evaluate_with_mean_jacobian(&row(&z))?;
        let mut failed = None;
        let fd = central_difference(&z, 1e-5, |x| match model.evaluate(&row(x)) {
            Ok(p) => p.mean.row(0).iter().cloned().collect(),
            Err(e) => {
                failed = Some(e);
                vec![0.0; 2]
            }
        });
        if let Some(e) = failed {
            return Err(e.into());
        }
        worst = worst.max(relative_error(&jac[0], &fd, 1e-8));
    }
    Ok(Check::within("stgp_mean_jacobian", worst, 1e-5, "100 points, relative"))
}

/// Continuous and RK4-discretized bicycle Jacobians against central differences.
pub fn bicycle_jacobians(params: &VehicleParams) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let dt = 1.0 / 30.0;
    for _ in 0..100 {
        let x = DVector::from_vec(vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(0.0..3.5),
            rng.random_range(-1.0..1.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-1.0..1.0),
            // the perturbation remap has a kink at ±δ_max
            rng.random_range(-0.95..0.95) * params.steer_max,
            rng.random_range(0.0..10.0),
        ]);
        let u = DVector::from_fn(N_U, |_, _| rng.random_range(-3.0..3.0));
        let delta_0 = rng.random_range(-0.15..0.15);
        let (_, jx, ju) = bicycle_derivative(&x, &u, params, delta_0);
        let fx = central_difference(x.as_slice(), 1e-6, |xs| {
            bicycle_derivative(&DVector::from_row_slice(xs), &u, params, delta_0).0.iter().cloned().collect()
        });
        let fu = central_difference(u.as_slice(), 1e-6, |us| {
            bicycle_derivative(&x, &DVector::from_row_slice(us), params, delta_0).0.iter().cloned().collect()
        });
        worst = worst.max(relative_error(&jx, &fx, 1.0)).max(relative_error(&ju, &fu, 1.0));

        let model = Bicycle { params: params.clone(), delta_0 };
        let lin = rk4_substeps(&model, &x, &u, dt, 4);
        let fx = central_difference(x.as_slice(), 1e-6, |xs| {
            rk4_next(&model, &DVector::from_row_slice(xs), &u, dt, 4).iter().cloned().collect()
        });
        let fu = central_difference(u.as_slice(), 1e-6, |us| {
            rk4_next(&model, &x, &DVector::from_row_slice(us), dt, 4).iter().cloned().collect()
        });
        debug_assert_eq!(fx.shape(), (N_X, N_X));
        worst = worst.max(relative_error(&lin.a, &fx, 1.0)).max(relative_error(&lin.b, &fu, 1.0));
    }
    Ok(Check::within("bicycle_jacobians", worst, 1e-5, "100 points, continuous and RK4"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        for c in [
            kernel_ssm_equivalence().unwrap(),
            oracle_equivalence().unwrap(),
            lq_matches_riccati().unwrap(),
            stgp_mean_jacobian().unwrap(),
            bicycle_jacobians(&VehicleParams::default()).unwrap(),
        ] {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn report_line_names_the_check() {
        let c = Check::within("demo", 2.0, 1.0, "");
        assert!(!c.passed);
        assert!(c.to_string().starts_with("FAIL demo"));
    }
}
