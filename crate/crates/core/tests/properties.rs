use cyclic_urn::limits::{numerical_rank, sigma_k, sigma_total, CovMatrix, RANK_TOL};
use cyclic_urn::moments::{gamma_ratio, mean_u, mean_vector, residual_l2_grid, LimitModel, MartingaleScale};
use cyclic_urn::oracle::{dist_moments, exact_distribution};
use cyclic_urn::residuals::{x_statistic, Checkpoint, NormalizationMode};
use cyclic_urn::rng::stream_seed;
use cyclic_urn::spectral::{classify, eigen_data, shift_action, ProjectionClass};
use cyclic_urn::stats::CovEstimate;
use cyclic_urn::urn::{simulate, UrnParams};
use num_complex::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn paths_add_one_reachable_ball_per_step(m in 2usize..20, j in 0usize..20, n in 0u64..300, seed: u64) {
        let params = UrnParams::new(m, j % m).unwrap();
        let states = simulate(&params, n, seed).collect_states();
        prop_assert_eq!(states.len() as u64, n + 1);
        for (i, s) in states.iter().enumerate() {
            prop_assert_eq!(s.counts().iter().sum::<u64>(), i as u64 + 1);
        }
        for w in states.windows(2) {
            let added: Vec<usize> = (0..m).filter(|&t| w[1].counts()[t] == w[0].counts()[t] + 1).collect();
            prop_assert_eq!(added.len(), 1);
            prop_assert!(w[0].counts()[(added[0] + m - 1) % m] > 0);
        }
    }

    #[test]
    fn paths_are_functions_of_the_seed(m in 2usize..300, n in 0u64..2000, seed: u64) {
        let params = UrnParams::new(m, 0).unwrap();
        prop_assert_eq!(simulate(&params, n, seed).run_to_end(), simulate(&params, n, seed).run_to_end());
    }

    #[test]
    fn classes_are_symmetric_and_match_lambda(m in 2usize..200, k in 1usize..200) {
        let k = k % m;
        prop_assume!(k != 0);
        let e = eigen_data(m).unwrap();
        prop_assert_eq!(classify(m, k), classify(m, m - k));
        match classify(m, k) {
            ProjectionClass::Large => prop_assert!(e.lambda(k) > 0.5),
            ProjectionClass::Critical => prop_assert!((e.lambda(k) - 0.5).abs() < 1e-12),
            ProjectionClass::Small => prop_assert!(e.lambda(k) < 0.5),
            ProjectionClass::Drift => prop_assert!(false),
        }
    }

    #[test]
    fn coordinates_reconstruct_and_rotate_under_shift(x in prop::collection::vec(0u32..1000, 2..24)) {
        let m = x.len();
        let e = eigen_data(m).unwrap();
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let u = e.coordinates(&xf);
        for (a, b) in e.reconstruct(&u).iter().zip(&xf) {
            prop_assert!((a.re - b).abs() < 1e-9 && a.im.abs() < 1e-9);
        }
        let us = e.coordinates(&shift_action(&xf));
        for k in 0..m {
            prop_assert!((us[k] - e.omega(k) * u[k]).norm() < 1e-9);
            prop_assert!((u[(m - k) % m] - u[k].conj()).norm() < 1e-9);
        }
    }

    #[test]
    fn gamma_ratio_equals_the_product(n in 0u64..60, theta in 0.0..std::f64::consts::TAU) {
        let z = Complex64::from_polar(1.0, theta);
        let direct = (1..=n).fold(Complex64::new(1.0, 0.0), |acc, s| acc * (1.0 + z / s as f64));
        let r = gamma_ratio(n, z).to_complex();
        prop_assert!((r - direct).norm() <= 1e-12 * direct.norm().max(1.0));
    }

    #[test]
    fn mean_vector_sums_to_total(m in 2usize..30, j in 0usize..30, n in 0u64..200_000) {
        let v = mean_vector(n, m, j % m).unwrap();
        let total: f64 = v.iter().sum();
        prop_assert!((total - (n + 1) as f64).abs() < 1e-9 * (n + 1) as f64);
    }

    #[test]
    fn conjugate_coordinates_have_conjugate_means(m in 3usize..30, k in 1usize..30, n in 0u64..5000) {
        let k = k % m;
        prop_assume!(k != 0);
        let a = mean_u(n, m, k, 0).unwrap();
        let b = mean_u(n, m, m - k, 0).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn tracked_martingale_matches_its_definition(m in 2usize..16, j in 0usize..16, n in 1u64..3000, seed: u64) {
        let params = UrnParams::new(m, j % m).unwrap();
        let counts = simulate(&params, n, seed).run_to_end();
        let track = Checkpoint::new(&params, n).unwrap().track(counts.counts()).unwrap();
        let e = eigen_data(m).unwrap();
        let u = e.count_coordinates(counts.counts());
        for k in 0..m {
            let mean = mean_u(n, m, k, j % m).unwrap();
            let scale = MartingaleScale::new(m, k).unwrap().at(n, &gamma_ratio(n, e.omega(k)));
            let want = scale * (u[k] - mean);
            prop_assert!((track.martingale()[k] - want).norm() <= 1e-9 * want.norm().max(1.0));
        }
    }

    #[test]
    fn residual_blocks_lie_in_their_planes(m in 7usize..16, n in 2u64..3000, seed: u64) {
        let params = UrnParams::new(m, 0).unwrap();
        let e = eigen_data(m).unwrap();
        let counts = simulate(&params, n, seed).run_to_end();
        let track = Checkpoint::new(&params, n).unwrap().track(counts.counts()).unwrap();
        for k in (1..=m / 2).filter(|&k| e.class(k) != ProjectionClass::Large) {
            let x = x_statistic(&track, &[], k, NormalizationMode::GammaRatio).unwrap();
            let coords = e.coordinates(&x);
            for (l, c) in coords.iter().enumerate() {
                if l != k && l != m - k {
                    prop_assert!(c.norm() < 1e-9, "k={} leaks into l={}", k, l);
                }
            }
        }
    }

    #[test]
    fn covariance_estimates_are_symmetric_psd(rows in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 4), 3..40)) {
        let est = CovEstimate::from_samples(&rows).unwrap();
        let c = &est.covariance;
        prop_assert!(c.is_symmetric(1e-14));
        let scale = c.max_abs().max(1.0);
        prop_assert!(c.eigenvalues().unwrap().iter().all(|&v| v >= -1e-10 * scale));
    }

    #[test]
    fn stream_seeds_are_distinct(master: u64, a in 0u64..1_000_000, b in 0u64..1_000_000) {
        prop_assume!(a != b);
        prop_assert_ne!(stream_seed(master, a), stream_seed(master, b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_laws_are_distributions(m in 2usize..7, j in 0usize..7, n in 0u64..7) {
        let j = j % m;
        let law = exact_distribution(m, j, n).unwrap();
        let total: f64 = law.probabilities().values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for key in law.probabilities().keys() {
            prop_assert_eq!(key.iter().sum::<u64>(), n + 1);
        }
        let moments = dist_moments(&law);
        for (a, b) in moments.mean.iter().zip(mean_vector(n, m, j).unwrap()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn raw_residual_decreases(m in 7usize..14, n0 in 10u64..200) {
        let e = eigen_data(m).unwrap();
        for k in (1..m).filter(|&k| e.class(k) == ProjectionClass::Large) {
            let grid: Vec<u64> = (0..5).map(|i| n0 << i).collect();
            let rows = residual_l2_grid(&grid, m, k, 50_000, LimitModel::Truncated).unwrap();
            for w in rows.windows(2) {
                prop_assert!(w[1].raw < w[0].raw);
            }
        }
    }
}

#[test]
fn block_covariances_assemble_the_total() {
    for m in 7..=30 {
        let total = sigma_total(m).unwrap();
        assert_psd(&total);
        if m % 6 == 0 {
            assert_eq!(numerical_rank(&total, RANK_TOL).unwrap(), 2);
            continue;
        }
        let mut acc = CovMatrix::zeros(m);
        for k in 1..=m / 2 {
            let s = sigma_k(m, k).unwrap();
            let want = if 2 * k == m { 1 } else { 2 };
            assert_eq!(numerical_rank(&s, RANK_TOL).unwrap(), want, "m={m} k={k}");
            acc = acc.add(&s);
        }
        assert!((acc.matrix() - total.matrix()).amax() < 1e-14);
    }
}

fn assert_psd(c: &CovMatrix) {
    assert!(c.is_symmetric(1e-14));
    assert!(c.eigenvalues().unwrap().iter().all(|&v| v >= -1e-12));
}
