use obliq_core::control::{dare_residual, solve_dare, DARE_MAX_ITER, DARE_TOL};
use obliq_core::embedding::monomial_exponents;
use obliq_core::numerics::{pinv, spectral_radius, DEFAULT_RCOND};
use obliq_core::{DynSystem, Matrix};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn shaped() -> impl Strategy<Value = Matrix> {
    (1usize..7, 1usize..7).prop_flat_map(|(r, c)| matrix(r, c))
}

fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pinv_satisfies_penrose_identities(m in shaped()) {
        let p = pinv(&m, DEFAULT_RCOND).unwrap();
        let scale = 1.0 + m.norm() * p.norm();
        prop_assert!((&m * &p * &m - &m).norm() < 1e-9 * scale * m.norm().max(1.0));
        prop_assert!((&p * &m * &p - &p).norm() < 1e-9 * scale * p.norm().max(1.0));
        let mp = &m * &p;
        let pm = &p * &m;
        prop_assert!((&mp - mp.transpose()).norm() < 1e-9 * scale);
        prop_assert!((&pm - pm.transpose()).norm() < 1e-9 * scale);
    }

    #[test]
    fn monomial_dictionary_lists_each_monomial_once(n in 1usize..5, degree in 1u32..5) {
        let e = monomial_exponents(n, degree);
        prop_assert_eq!(e.len() as u64, binomial(n as u64 + degree as u64, degree as u64) - 1);
        let mut sorted = e.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), e.len());
        let degrees: Vec<u32> = e.iter().map(|x| x.iter().sum()).collect();
        prop_assert!(degrees.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(&e[..n], &(0..n).map(|i| { let mut v = vec![0; n]; v[i] = 1; v }).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn dare_stabilizes_fully_actuated_systems(a in (1usize..6).prop_flat_map(|n| matrix(n, n)), r in 0.01..10.0f64) {
        let n = a.nrows();
        let a = a * 1.5;
        let b = Matrix::identity(n, n);
        let q = Matrix::identity(n, n);
        let rw = Matrix::identity(n, n) * r;
        let sol = solve_dare(&a, &b, &q, &rw, DARE_TOL, DARE_MAX_ITER).unwrap();
        prop_assert!(dare_residual(&a, &b, &q, &rw, &sol.p) < 1e-8 * sol.p.norm().max(1.0));
        prop_assert!(sol.closed_loop_radius < 1.0);
        prop_assert!((spectral_radius(&(&a + &b * &sol.gain)) - sol.closed_loop_radius).abs() < 1e-9);
    }

    #[test]
    fn system_configs_round_trip_through_json(eps in 0.01..0.99f64, a in -1.0..1.0f64, b in -1.0..1.0f64) {
        for sys in [DynSystem::Rtac { epsilon: eps }, DynSystem::NonNormal { a, b }, DynSystem::Duffing] {
            let back: DynSystem = serde_json::from_str(&serde_json::to_string(&sys).unwrap()).unwrap();
            prop_assert_eq!(back, sys);
        }
    }
}
