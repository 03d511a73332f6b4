use nalgebra::DMatrix;
use proptest::prelude::*;
use stgp_core::gp_models::{exact_stgp_predict, rbf_kernel, row, spacetime_kernel};
use stgp_core::temporal_ssm::{build_ssm, discretize, matern_cov, matrix_exp};
use stgp_core::{Dataset, SpatialKernelSpec, TemporalKernelSpec};

fn nu_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(1.5), Just(2.5)]
}

/// Plain Taylor series of a matrix with small norm, summed to convergence.
fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

proptest! {
    #[test]
    fn ssm_reproduces_matern(nu in nu_strategy(), sigma_t in 0.2f64..4.0, tau in 0.0f64..6.0) {
        let spec = TemporalKernelSpec::new(nu, sigma_t).unwrap();
        let ssm = build_ssm(&spec).unwrap();
        let implied = ssm.implied_cov(tau);
        prop_assert!((implied - matern_cov(tau, &spec).unwrap()).abs() <= 1e-8);
    }

    #[test]
    fn matern_is_even_and_bounded(nu in nu_strategy(), sigma_t in 0.2f64..4.0, tau in -6.0f64..6.0) {
        let spec = TemporalKernelSpec::new(nu, sigma_t).unwrap();
        let k = matern_cov(tau, &spec).unwrap();
        prop_assert_eq!(k, matern_cov(-tau, &spec).unwrap());
        prop_assert!(k > 0.0 && k <= 1.0);
    }

    #[test]
    fn matrix_exp_matches_taylor_on_small_matrices(entries in prop::collection::vec(-0.4f64..0.4, 9)) {
        let m = DMatrix::from_row_slice(3, 3, &entries);
        let diff = matrix_exp(&m) - taylor_exp(&m);
        prop_assert!(diff.amax() <= 1e-13);
    }

    #[test]
    fn matrix_exp_group_properties(entries in prop::collection::vec(-3.0f64..3.0, 9)) {
        let m = DMatrix::from_row_slice(3, 3, &entries);
        let e = matrix_exp(&m);
        let scale = e.amax().max(1.0);
        let prod = &e * matrix_exp(&(-&m));
        prop_assert!((prod - DMatrix::<f64>::identity(3, 3)).amax() <= 1e-9 * scale * scale);
        let twice = matrix_exp(&(&m * 2.0));
        prop_assert!((twice - &e * &e).amax() <= 1e-10 * scale * scale);
    }

    #[test]
    fn matrix_exp_of_symmetric_matches_eigen(entries in prop::collection::vec(-2.0f64..2.0, 6)) {
        let m = DMatrix::from_fn(3, 3, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            entries[a * 3 + b - a * (a + 1) / 2]
        });
        let eig = m.clone().symmetric_eigen();
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
        let oracle = &eig.eigenvectors * d * eig.eigenvectors.transpose();
        prop_assert!((matrix_exp(&m) - &oracle).amax() <= 1e-11 * oracle.amax().max(1.0));
    }

    #[test]
    fn discretized_noise_is_psd_and_consistent(nu in nu_strategy(), sigma_t in 0.2f64..4.0, dt in 0.0f64..1.0) {
        let ssm = build_ssm(&TemporalKernelSpec::new(nu, sigma_t).unwrap()).unwrap();
        let tr = discretize(&ssm, dt).unwrap();
        let eigs = tr.q.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eigs.min() >= -1e-12);
        let recon = &tr.a * &ssm.p_inf * tr.a.transpose() + &tr.q;
        prop_assert!((recon - &ssm.p_inf).amax() <= 1e-10 * ssm.p_inf.amax());
    }

    #[test]
    fn spacetime_kernel_is_separable(
        z in prop::collection::vec(-2.0f64..2.0, 4),
        t in prop::collection::vec(0.0f64..5.0, 2),
    ) {
        let ks = SpatialKernelSpec::new(1.7, vec![0.8, 1.3]).unwrap();
        let kt = TemporalKernelSpec::new(1.5, 0.9).unwrap();
        let a = row(&z[0..2]);
        let b = row(&z[2..4]);
        let k = spacetime_kernel(&a, &t[0..1], &b, &t[1..2], &ks, &kt).unwrap()[(0, 0)];
        let expected = rbf_kernel(&a, &b, &ks)[(0, 0)] * matern_cov(t[0] - t[1], &kt).unwrap();
        prop_assert!((k - expected).abs() <= 1e-14);
    }

    #[test]
    fn exact_posterior_variance_shrinks_with_data(
        pts in prop::collection::vec((-1.5f64..1.5, 0.0f64..0.5), 1..12),
        q in -1.5f64..1.5,
    ) {
        let ks = SpatialKernelSpec::new(1.2, vec![0.6]).unwrap();
        let kt = TemporalKernelSpec::new(1.5, 1.0).unwrap();
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let mut data = Dataset::empty(1, vec![0.05]);
        let mut last = 1.2 + 1e-12;
        for (z, t) in sorted {
            data.push(&[z], t, &[z.sin()]).unwrap();
            let post = exact_stgp_predict(&data, &row(&[q]), &[0.6], &ks, &kt).unwrap();
            let v = post.variance(0, 0);
            prop_assert!(v <= last + 1e-9);
            prop_assert!(v >= 0.0);
            last = v;
        }
    }
}
