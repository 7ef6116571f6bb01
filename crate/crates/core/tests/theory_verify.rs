use pairnet::seed;
use pairnet::theory::{
    confounded_scene, consistency_sweep, random_scene, scene_functionals, verify_ite_bound, verify_lemma_identity, FiniteScene,
    Ipm, NeighborKernel, Polynomial, SweepConfig, SweepGenerator,
};
use proptest::prelude::*;

fn two_point_scene(kernel: NeighborKernel) -> FiniteScene {
    FiniteScene {
        points: vec![0.0, 1.0],
        p: [vec![1.0, 0.0], vec![0.0, 1.0]],
        u: [0.5, 0.5],
        r: [Polynomial::new(vec![0.0, 1.0]), Polynomial::new(vec![1.0])],
        kernel,
    }
}

#[test]
fn polynomial_calculus() {
    let p = Polynomial::new(vec![1.0, -2.0, 3.0]);
    assert_eq!(p.eval(2.0), 9.0);
    assert_eq!(p.derivative().coeffs, vec![-2.0, 6.0]);
    assert_eq!(p.square().coeffs, vec![1.0, -4.0, 10.0, -12.0, 9.0]);
    let lip = p.lipschitz_on(-1.0, 1.0);
    assert!(lip >= 8.0 && lip < 8.01);
}

#[test]
fn hand_computed_two_point_scene() {
    let scene = two_point_scene(NeighborKernel::Nearest);
    let f = scene_functionals(&scene).unwrap();
    // r0 = x, r1 = 1: ITE residual (1 − x)² is 1 at 0 and 0 at 1.
    assert!((f.eps_ite - 0.5).abs() < 1e-15);
    // Control anchor at 0 pairs with treated 1: (0 − 1)²; treated anchor at 1 pairs with control 0: (1 − 0)².
    assert!((f.eps_pair - 1.0).abs() < 1e-15);
    assert_eq!(f.q_marginal, [vec![0.0, 1.0], vec![1.0, 0.0]]);
    let check = verify_lemma_identity(&scene).unwrap();
    assert!(check.gap < 1e-14);
}

#[test]
fn lemma_identity_on_random_scenes() {
    let mut rng = seed::rng(1);
    for i in 0..50 {
        let kernel = match i % 3 {
            0 => NeighborKernel::MassWeighted { lambda: 2.0 },
            1 => NeighborKernel::Unweighted { lambda: 0.5 },
            _ => NeighborKernel::Nearest,
        };
        let scene = random_scene(12, 3, kernel, &mut rng);
        let c = verify_lemma_identity(&scene).unwrap();
        assert!(c.gap <= 1e-10, "scene {i}: gap {}", c.gap);
    }
}

#[test]
fn bound_holds_and_pair_ipm_is_smaller() {
    let mut rng = seed::rng(2);
    for _ in 0..20 {
        let scene = random_scene(15, 1, NeighborKernel::MassWeighted { lambda: 3.0 }, &mut rng);
        let b = verify_ite_bound(&scene, Ipm::Wasserstein1).unwrap();
        assert!(b.holds, "margin {}", b.margin);
    }
    for _ in 0..10 {
        let scene = confounded_scene(15, 1.5, NeighborKernel::MassWeighted { lambda: 5.0 }, &mut rng);
        let b = verify_ite_bound(&scene, Ipm::Wasserstein1).unwrap();
        assert!(b.pair_ipm < b.factual_ipm);
    }
}

#[test]
fn invalid_scenes_are_rejected() {
    let mut s = two_point_scene(NeighborKernel::Nearest);
    s.p[0] = vec![0.5, 0.4];
    assert!(scene_functionals(&s).is_err());
    let mut s = two_point_scene(NeighborKernel::Nearest);
    s.u = [0.7, 0.7];
    assert!(verify_lemma_identity(&s).is_err());
    let s = two_point_scene(NeighborKernel::MassWeighted { lambda: -1.0 });
    assert!(s.validate().is_err());
}

#[test]
fn strict_overlap_shrinks_neighbor_distance() {
    let rows = consistency_sweep(&SweepConfig::default(), 3).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows[3].delta_hat < 0.5 * rows[0].delta_hat);
    let control = SweepConfig { generator: SweepGenerator::DisjointSupports { gap: 2.0 }, ..Default::default() };
    let rows = consistency_sweep(&control, 3).unwrap();
    assert!(rows[3].delta_hat / rows[0].delta_hat > 0.9);
    assert!(rows.iter().all(|r| r.delta_hat >= 2.0));
}

#[test]
fn degenerate_covariates_have_zero_distance() {
    let cfg = SweepConfig { generator: SweepGenerator::Degenerate, sizes: vec![10, 40], ..Default::default() };
    let rows = consistency_sweep(&cfg, 0).unwrap();
    assert!(rows.iter().all(|r| r.delta_hat == 0.0 && r.w1 == [0.0, 0.0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_row_stochastic(s in 0u64..10_000, lambda in 0.0..50.0f64) {
        let scene = random_scene(9, 2, NeighborKernel::MassWeighted { lambda }, &mut seed::rng(s));
        for t in 0..2 {
            let q = scene.kernel_matrix(t);
            for row in q.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
        let f = scene_functionals(&scene).unwrap();
        prop_assert!(f.eps_pair >= 0.0 && f.eps_ite >= 0.0);
        for t in 0..2 {
            prop_assert!((f.q_marginal[t].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lemma_gap_is_tiny_for_any_kernel(s in 0u64..10_000, lambda in 0.0..20.0f64, degree in 0usize..4) {
        let scene = random_scene(8, degree, NeighborKernel::Unweighted { lambda }, &mut seed::rng(s));
        prop_assert!(verify_lemma_identity(&scene).unwrap().gap <= 1e-10);
    }

    #[test]
    fn linear_bound_never_fails(s in 0u64..10_000) {
        let scene = random_scene(10, 1, NeighborKernel::Nearest, &mut seed::rng(s));
        prop_assert!(verify_ite_bound(&scene, Ipm::Wasserstein1).unwrap().holds);
    }
}
