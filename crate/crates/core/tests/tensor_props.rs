use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use locc_net::linalg::{self, c, CMat};
use locc_net::tensor::{self, PureState, Register};

fn random_state(dims: &[usize], seed: u64) -> PureState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let v = linalg::random_complex_gaussian(n, 1, &mut rng);
    let regs = dims.iter().enumerate().map(|(i, &d)| Register::physical(format!("r{i}"), d, format!("p{i}"))).collect();
    PureState::from_amplitudes(regs, v.iter().copied().collect()).unwrap().normalized()
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=3, 2..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schmidt_rebuilds_the_state(d in dims(), seed in any::<u64>(), cut in 1usize..4) {
        let psi = random_state(&d, seed);
        let cut = cut.min(d.len() - 1);
        let left: Vec<String> = (0..cut).map(|i| format!("r{i}")).collect();
        let s = tensor::schmidt(&psi, &left, 1e-12).unwrap();
        let w: f64 = s.coefficients.iter().map(|x| x * x).sum();
        prop_assert!((w - 1.0).abs() < 1e-10);
        prop_assert!(s.coefficients.windows(2).all(|p| p[0] >= p[1]));
        prop_assert!(tensor::states_equal_up_to_phase(&s.reconstruct(), &psi, 1e-10).unwrap());
        let rho = tensor::partial_trace(&psi, &left).unwrap();
        prop_assert_eq!(tensor::numerical_rank(&rho, 1e-12), s.rank());
    }

    #[test]
    fn partial_traces_are_states(d in dims(), seed in any::<u64>(), keep in 0usize..4) {
        let psi = random_state(&d, seed);
        let keep = [format!("r{}", keep.min(d.len() - 1))];
        let rho = tensor::partial_trace(&psi, &keep).unwrap();
        prop_assert!((rho.trace() - 1.0).abs() < 1e-10);
        prop_assert!(rho.validate(1e-10).is_ok());
        prop_assert!(rho.eigenvalues().iter().all(|&x| x > -1e-12));
    }

    #[test]
    fn permutations_round_trip(d in dims(), seed in any::<u64>(), rot in 0usize..4) {
        let psi = random_state(&d, seed);
        let n = d.len();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let mut back = vec![0; n];
        for (i, &o) in order.iter().enumerate() {
            back[o] = i;
        }
        let p = tensor::permute_registers(&psi, &order).unwrap();
        prop_assert!((p.norm() - 1.0).abs() < 1e-12);
        let q = tensor::permute_registers(&p, &back).unwrap();
        prop_assert_eq!(q.ids(), psi.ids());
        prop_assert!(tensor::states_equal_up_to_phase(&q, &psi, 1e-12).unwrap());
    }

    #[test]
    fn svd_factors_any_matrix(r in 1usize..7, k in 1usize..7, rank in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = linalg::random_complex_gaussian(r, rank, &mut rng) * linalg::random_complex_gaussian(rank, k, &mut rng);
        let d = linalg::svd(&m);
        let n = r.min(k);
        let sig = CMat::from_diagonal(&nalgebra::DVector::from_iterator(n, d.s.iter().map(|&x| c(x, 0.0))));
        prop_assert!(linalg::max_abs(&(&d.u * sig * &d.v_t - &m)) < 1e-10 * (1.0 + d.s[0]));
        prop_assert!(tensor::isometry_residual(&d.u) < 1e-10);
        prop_assert!(tensor::isometry_residual(&d.v_t.adjoint()) < 1e-10);
    }

    #[test]
    fn completed_isometries_are_isometries(out in 1usize..7, inp in 1usize..7, seed in any::<u64>()) {
        let (out, inp) = (out.max(inp), out.min(inp));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = linalg::random_complex_gaussian(out, inp, &mut rng);
        prop_assert!(tensor::isometry_residual(&linalg::complete_isometry(&m)) < 1e-10);
    }
}
