use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgp_core::gp_models::row;
use stgp_core::linalg::is_lower_triangular;
use stgp_core::reference::{central_difference, relative_error, DenseKalman};
use stgp_core::stgp::{self, placement};
use stgp_core::{
    Dataset, InducingConfig, SpatialKernelSpec, StgpModel, StgpState, TemporalKernelSpec, TrainingBatch,
};

fn config(m: usize, dim: usize, nu: f64, dt: f64, seed: u64) -> InducingConfig {
    InducingConfig {
        inducing: placement::latin_hypercube(&vec![-1.0; dim], &vec![1.0; dim], m, seed).unwrap(),
        spatial: SpatialKernelSpec::new(0.9, vec![0.6; dim]).unwrap(),
        temporal: TemporalKernelSpec::new(nu, 0.5).unwrap(),
        noise_variance: vec![0.02; 2],
        dt,
        n_outputs: 2,
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, dim, |_, _| rng.random_range(-1.2..1.2))
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

#[test]
fn square_root_filter_matches_dense_kalman() {
    for (m, nu) in [(4, 1.5), (2, 2.5), (8, 0.5)] {
        let cfg = config(m, 2, nu, 0.05, 3);
        let (cache, mut state) = stgp::init(&cfg).unwrap();
        let mut dense = DenseKalman::new(&cfg, cache.kvv_jitter).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n_y = rng.random_range(0..4);
            if n_y == 0 {
                stgp::update(&mut state, &cache, None, 0.02).unwrap();
                dense.step(None, 0.02).unwrap();
            } else {
                let z = random_rows(&mut rng, n_y, 2);
                let y = DMatrix::from_fn(n_y, 2, |_, _| rng.random_range(-1.0..1.0));
                let batch = TrainingBatch::new(z.clone(), y.clone()).unwrap();
                stgp::update(&mut state, &cache, Some(&batch), 0.02).unwrap();
                dense.step(Some((&z, &y)), 0.02).unwrap();
            }
            assert!(is_lower_triangular(&state.sigma_root));
            assert!((0..state.sigma_root.nrows()).all(|i| state.sigma_root[(i, i)] >= 0.0));
            assert!((&state.mu - &dense.mu).amax() <= 1e-8, "mean drift, M={m}");
            assert!((state.covariance() - &dense.cov).amax() <= 1e-8, "covariance drift, M={m}");
        }
    }
}

#[test]
fn multi_stage_evaluate_matches_dense_propagation() {
    let cfg = config(4, 2, 1.5, 0.1, 5);
    let (cache, mut state) = stgp::init(&cfg).unwrap();
    let mut dense = DenseKalman::new(&cfg, cache.kvv_jitter).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..30 {
        let z = random_rows(&mut rng, 2, 2);
        let y = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        stgp::update(&mut state, &cache, Some(&TrainingBatch::new(z.clone(), y.clone()).unwrap()), 0.02)
            .unwrap();
        dense.step(Some((&z, &y)), 0.02).unwrap();
    }
    let q = random_rows(&mut rng, 12, 2);
    let post = stgp::evaluate(&state, &cache, &q).unwrap();
    let (mean, var) = dense.evaluate(&q).unwrap();
    assert!((&post.mean - mean).amax() < 1e-10);
    for (k, v) in var.iter().enumerate() {
        assert!((post.variance(k, 0) - v).abs() < 1e-10);
        assert!((post.variance(k, 1) - v).abs() < 1e-10);
    }
}

#[test]
fn static_model_matches_inducing_point_formula() {
    let cfg = config(5, 2, 1.5, 0.0, 8);
    let (cache, mut state) = stgp::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let z = random_rows(&mut rng, 3, 2);
        let y = DMatrix::from_fn(3, 2, |i, _| z[(i, 0)].sin());
        stgp::update(&mut state, &cache, Some(&TrainingBatch::new(z, y).unwrap()), 0.02).unwrap();
    }
    let q = random_rows(&mut rng, 1, 2);
    let post = stgp::evaluate(&state, &cache, &q).unwrap();

    // E[f] = K_ZV K_VV⁻¹ H̄ μ, V[f] = K_ZZ - Q_ZZ + C̄ Σ C̄ᵀ
    let kzv = stgp_core::gp_models::rbf_kernel(&q, &cache.inducing, &cache.spatial);
    let kvv_inv = cache.kvv.clone().try_inverse().unwrap();
    let c = &kzv * &kvv_inv * &cache.h_bar;
    let mean = &c * &state.mu;
    let var = cfg.spatial.signal_variance - (&kzv * &kvv_inv * kzv.transpose())[(0, 0)]
        + (&c * state.covariance() * c.transpose())[(0, 0)];
    assert!((&post.mean - mean).amax() < 1e-10);
    assert!((post.variance(0, 0) - var).abs() < 1e-10);
}

#[test]
fn exact_at_inducing_points() {
    let dt = 1.0 / 30.0;
    for m in [2, 5] {
        let cfg = config(m, 2, 1.5, dt, 21);
        let (cache, mut state) = stgp::init(&cfg).unwrap();
        let mut data = Dataset::empty(2, vec![0.02; 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 1..=40 {
            let j = rng.random_range(0..m);
            let z: Vec<f64> = cache.inducing.row(j).iter().cloned().collect();
            let y = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let batch = TrainingBatch::single(&z, &y).unwrap();
            stgp::update(&mut state, &cache, Some(&batch), 0.02).unwrap();
            data.push(&z, k as f64 * dt, &y).unwrap();
        }
        let post = stgp::evaluate(&state, &cache, &cache.inducing).unwrap();
        let times: Vec<f64> = (1..=m).map(|i| state.now + i as f64 * dt).collect();
        let exact = stgp_core::gp_models::exact_stgp_predict(
            &data,
            &cache.inducing,
            &times,
            &cfg.spatial,
            &cfg.temporal,
        )
        .unwrap();
        for i in 0..m {
            for g in 0..2 {
                let (a, b) = (post.mean[(i, g)], exact.mean[(i, g)]);
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "mean {a} vs {b}");
                let (a, b) = (post.variance(i, g), exact.variance(i, g));
                assert!((a - b).abs() <= 1e-6 * b, "variance {a} vs {b}");
            }
        }
    }
}

#[test]
fn psd_and_prior_dominance_after_many_updates() {
    let cfg = config(6, 3, 2.5, 1.0 / 30.0, 1);
    let (cache, mut state) = stgp::init(&cfg).unwrap();
    let prior = cache.kvv.kronecker(&cache.ssm.p_inf);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let probes = random_rows(&mut rng, 5, 3);
    for i in 0..1200 {
        let batch = if rng.random_bool(0.7) {
            let n = rng.random_range(1..3);
            let z = random_rows(&mut rng, n, 3);
            let y = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
            Some(TrainingBatch::new(z, y).unwrap())
        } else {
            None
        };
        stgp::update(&mut state, &cache, batch.as_ref(), 0.02).unwrap();
        assert!(state.sigma_root.iter().all(|v| v.is_finite()));
        assert!(is_lower_triangular(&state.sigma_root));
        if i % 50 == 0 {
            let post = stgp::evaluate(&state, &cache, &probes).unwrap();
            for k in 0..probes.nrows() {
                assert!(post.variance(k, 0) <= cfg.spatial.signal_variance + 1e-6);
                assert!(post.variance(k, 0) >= -1e-9);
            }
        }
    }
    let sigma = state.covariance();
    assert!(min_eigenvalue(&sigma) >= -1e-9);
    let mut gap = prior - sigma;
    for i in 0..gap.nrows() {
        gap[(i, i)] += 1e-6;
    }
    assert!(min_eigenvalue(&gap) >= 0.0);
}

#[test]
fn variance_forgets_towards_prior() {
    let cfg = config(4, 2, 1.5, 0.05, 6);
    let (cache, mut state) = stgp::init(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let z = random_rows(&mut rng, 2, 2);
        let y = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0));
        stgp::update(&mut state, &cache, Some(&TrainingBatch::new(z, y).unwrap()), 0.02).unwrap();
    }
    let q = cache.inducing.rows(0, 1).into_owned();
    let mut last = stgp::evaluate(&state, &cache, &q).unwrap().variance(0, 0);
    for _ in 0..400 {
        stgp::update(&mut state, &cache, None, 0.02).unwrap();
        let v = stgp::evaluate(&state, &cache, &q).unwrap().variance(0, 0);
        assert!(v >= last - 1e-10);
        last = v;
    }
    assert!((last - cfg.spatial.signal_variance).abs() < 1e-4);
}

#[test]
fn mean_jacobian_matches_finite_differences() {
    let cfg = config(10, 5, 1.5, 1.0 / 30.0, 12);
    let mut model = StgpModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let z = random_rows(&mut rng, 1, 5);
        let y = DMatrix::from_fn(1, 2, |_, g| (z[(0, g)] * 2.0).sin() + z[(0, 4)]);
        model.update(Some(&TrainingBatch::new(z, y).unwrap())).unwrap();
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, jac) = model.evaluate_with_mean_jacobian(&row(&z)).unwrap();
        let fd = central_difference(&z, 1e-5, |x| {
            let p = model.evaluate(&row(x)).unwrap();
            p.mean.row(0).iter().cloned().collect()
        });
        worst = worst.max(relative_error(&jac[0], &fd, 1e-8));
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn jacobian_vanishes_at_mean_extremum() {
    // single inducing point, data only there: the mean is a scaled RBF bump
    let cfg = InducingConfig {
        inducing: row(&[0.3, -0.2]),
        spatial: SpatialKernelSpec::new(1.0, vec![0.5, 0.8]).unwrap(),
        temporal: TemporalKernelSpec::new(0.5, 1.0).unwrap(),
        noise_variance: vec![0.01],
        dt: 0.1,
        n_outputs: 1,
    };
    let mut model = StgpModel::new(cfg).unwrap();
    for _ in 0..5 {
        model.update(Some(&TrainingBatch::single(&[0.3, -0.2], &[1.0]).unwrap())).unwrap();
    }
    let (_, jac) = model.evaluate_with_mean_jacobian(&row(&[0.3, -0.2])).unwrap();
    assert!(jac[0].amax() < 1e-6);
}

#[test]
fn checkpoint_round_trips_through_json() {
    let mut cfg = config(5, 2, 1.5, 0.1, 2);
    cfg.noise_variance = vec![0.02, 0.05];
    let mut model = StgpModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let z = random_rows(&mut rng, 1, 2);
        model.update(Some(&TrainingBatch::new(z, row(&[0.5, -0.1])).unwrap())).unwrap();
    }
    let text = serde_json::to_string(&model.checkpoint()).unwrap();
    let restored = StgpModel::restore(serde_json::from_str(&text).unwrap()).unwrap();
    let q = random_rows(&mut rng, 4, 2);
    let a = model.evaluate(&q).unwrap();
    let b = restored.evaluate(&q).unwrap();
    assert_eq!(a, b);
    assert_eq!(restored.count(), 10);

    let state = &model.groups()[0].state;
    let value: serde_json::Value = serde_json::to_value(state).unwrap();
    let keys: Vec<&str> = value.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    assert_eq!(keys.len(), 4);
    for k in ["mu", "sigma_root", "now", "count"] {
        assert!(keys.contains(&k));
    }
    let d = state.sigma_root.nrows();
    assert_eq!(value["sigma_root"].as_array().unwrap().len(), d * (d + 1) / 2);
    let back: StgpState = serde_json::from_value(value).unwrap();
    assert_eq!(&back, state);
}

#[test]
fn per_output_noise_runs_independent_filters() {
    let mut cfg = config(3, 2, 1.5, 0.1, 4);
    cfg.noise_variance = vec![0.01, 0.5];
    let mut model = StgpModel::new(cfg.clone()).unwrap();
    let mut single = cfg.clone();
    single.noise_variance = vec![0.5];
    single.n_outputs = 1;
    let (cache, mut state) = stgp::init(&single).unwrap();
    for i in 0..10 {
        let z = [0.1 * i as f64, -0.2];
        model.update(Some(&TrainingBatch::single(&z, &[1.0, 2.0]).unwrap())).unwrap();
        stgp::update(&mut state, &cache, Some(&TrainingBatch::single(&z, &[2.0]).unwrap()), 0.5).unwrap();
    }
    let q = row(&[0.2, 0.1]);
    let a = model.evaluate(&q).unwrap();
    let b = stgp::evaluate(&state, &cache, &q).unwrap();
    assert!((a.mean[(0, 1)] - b.mean[(0, 0)]).abs() < 1e-12);
    assert!((a.variance(0, 1) - b.variance(0, 0)).abs() < 1e-12);
    assert!(a.variance(0, 0) < a.variance(0, 1));
}
