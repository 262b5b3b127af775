use kernfuse::fusion_center::*;
use kernfuse::harness::{assemble, parse_config, BUNDLED_CONFIG};
use kernfuse::learning_runtime::System;
use kernfuse::rkhs_core::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundled() -> System {
    assemble(&parse_config(BUNDLED_CONFIG).unwrap()).unwrap().system
}

fn two_agent_config(f1: &str, f2: &str, d1: &str, d2: &str) -> String {
    format!(
        "[agent1]\nfeatures = {f1}\ndomain = {d1}\nanchor_pool = grid(60)\n\
         [agent2]\nfeatures = {f2}\ndomain = {d2}\nanchor_pool = grid(60)\n\
         [fusion]\nrho = 1\n[run]\nepsilon = 1e-3\n"
    )
}

fn system_from(text: &str) -> System {
    assemble(&parse_config(text).unwrap()).unwrap().system
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

#[test]
fn bundled_download_matrices_are_diagonal_selectors() {
    let sys = bundled();
    let expected = [[1.0, 1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 1.0]];
    for (op, diag) in sys.downloads.iter().zip(expected) {
        let target = DMatrix::from_diagonal(&DVector::from_row_slice(&diag));
        assert!((op.matrix() - &target).amax() < 1e-12);
        assert!((op.sqrt() - &target).amax() < 1e-12);
        assert!((op.projector() - &target).amax() < 1e-12);
    }
    assert_eq!(sys.c_d, 1.0);
}

#[test]
fn phi_is_orthonormal() {
    let sys = bundled();
    let u = sys.space.phi();
    let g = u.transpose() * u;
    assert!((g - DMatrix::identity(u.ncols(), u.ncols())).amax() < 1e-10);
}

#[test]
fn fusion_gram_is_symmetric_psd_with_rank_m() {
    let sys = bundled();
    let k = sys.space.gram();
    assert_eq!(k.nrows(), 10);
    assert!((k - k.transpose()).amax() == 0.0);
    let eig = k.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-10 * top));
    assert_eq!(eig.eigenvalues.iter().filter(|&&l| l > 1e-10 * top).count(), 5);
}

#[test]
fn upload_of_zero_is_zero() {
    let sys = bundled();
    for i in 0..2 {
        let up = upload(&sys.space, &sys.space.agent(i).zero_function()).unwrap();
        assert_eq!(up.space(), SpaceTag::Fusion);
        assert!(up.coefficients().iter().all(|&c| c == 0.0));
    }
}

#[test]
fn upload_preserves_values_and_does_not_grow_the_norm() {
    let sys = bundled();
    let grid = linspace(-10.0, 10.0, 201);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..2 {
        let agent = sys.space.agent(i);
        for _ in 0..20 {
            let f = agent.function(random_vec(&mut rng, 5)).unwrap();
            let up = upload(&sys.space, &f).unwrap();
            let scale = grid.iter().fold(1.0f64, |m, &x| m.max(f.eval(x).abs()));
            for &x in &grid {
                assert!((f.eval(x) - up.eval(x)).abs() <= 1e-10 * scale);
            }
            assert!(up.norm() <= f.norm() * (1.0 + 1e-10) + 1e-12);
        }
    }
}

#[test]
fn upload_rejects_fused_functions() {
    let sys = bundled();
    let f = sys.space.fused_function(DVector::zeros(10)).unwrap();
    assert!(matches!(upload(&sys.space, &f), Err(RkhsError::MixedSpace(SpaceTag::Fusion, _))));
}

#[test]
fn reconstruct_scalar_example() {
    let features = FeatureSet::unchecked(vec![Feature::Constant]).unwrap();
    let kernel = std::sync::Arc::new(Kernel::Feature(features));
    let anchors = std::sync::Arc::new(AnchorSet::new(vec![0.0], SpaceTag::Agent1).unwrap());
    let f = RkhsFunction::new(DVector::from_vec(vec![0.5]), kernel, anchors, SpaceTag::Agent1).unwrap();
    let d = reconstruct_data(&f, 1.0).unwrap();
    assert_eq!(d.inputs, vec![0.0]);
    assert_eq!(d.outputs.as_slice(), &[1.0]);
    let zero = reconstruct_data(&f.with_coefficients(DVector::zeros(1)).unwrap(), 1.0).unwrap();
    assert_eq!(zero.outputs.as_slice(), &[0.0]);
}

#[test]
fn reconstruction_round_trip() {
    let sys = bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in 0..100 {
        let i = t % 2;
        let agent = sys.space.agent(i);
        let alpha = agent.canonical(&random_vec(&mut rng, 5));
        let rho = 10f64.powf(rng.random_range(-1.0..2.0));
        let d = reconstruct_data(&agent.function(alpha.clone()).unwrap(), rho).unwrap();
        assert_eq!(d.inputs, agent.anchors().points());
        let back = agent.canonical(&ridge_refit(agent.gram(), &d.outputs, rho).unwrap());
        assert!((back - &alpha).amax() <= 1e-8 * alpha.amax().max(1.0));
    }
}

#[test]
fn fusing_zero_outputs_gives_zero() {
    let sys = bundled();
    let d = |tag| ReconstructedData { space: tag, inputs: vec![], outputs: DVector::zeros(5) };
    let f = fuse(&sys.space, &d(SpaceTag::Agent1), &d(SpaceTag::Agent2), 1.0).unwrap();
    assert!(f.coefficients().iter().all(|&c| c == 0.0));
}

#[test]
fn fuse_checks_its_inputs() {
    let sys = bundled();
    let d = |tag, n| ReconstructedData { space: tag, inputs: vec![], outputs: DVector::zeros(n) };
    assert!(matches!(
        fuse(&sys.space, &d(SpaceTag::Agent1, 4), &d(SpaceTag::Agent2, 5), 1.0),
        Err(RkhsError::LengthMismatch { got: 4, expected: 5 })
    ));
    assert!(matches!(
        fuse(&sys.space, &d(SpaceTag::Agent2, 5), &d(SpaceTag::Agent2, 5), 1.0),
        Err(RkhsError::MixedSpace(SpaceTag::Agent2, SpaceTag::Agent1))
    ));
    assert!(matches!(
        fuse(&sys.space, &d(SpaceTag::Agent1, 5), &d(SpaceTag::Agent2, 5), 0.0),
        Err(RkhsError::InvalidRho(_))
    ));
}

#[test]
fn small_rho_fusion_interpolates_consistent_outputs() {
    let sys = bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = sys.space.gram();
    let anchors = sys.space.anchors().points().to_vec();
    for _ in 0..10 {
        let beta = random_vec(&mut rng, 10) / k.amax();
        let y = k * beta;
        let alpha = sys.space.fuse_coeffs(&y, 1e-10).unwrap();
        for (j, &x) in anchors.iter().enumerate() {
            assert!((sys.space.eval_fused(&alpha, x) - y[j]).abs() <= 1e-4);
        }
    }
}

fn gradient_descent(k: &DMatrix<f64>, y: &DVector<f64>, rho: f64, steps: usize) -> DVector<f64> {
    let h = k * k + k * rho;
    let step = 1.0 / (2.0 * h.clone().symmetric_eigen().eigenvalues.amax());
    let ky = k * y;
    let mut a = DVector::zeros(y.len());
    for _ in 0..steps {
        let grad = (&h * &a - &ky) * 2.0;
        a -= grad * step;
    }
    a
}

#[test]
fn fusion_beats_gradient_descent() {
    let sys = system_from(&two_agent_config("constant, monomial(1)", "monomial(2)", "-1..1", "-1..1"));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = sys.space.gram();
    for _ in 0..10 {
        let y = random_vec(&mut rng, k.nrows());
        let rho = 10f64.powf(rng.random_range(-1.0..1.0));
        let closed = sys.space.fuse_coeffs(&y, rho).unwrap();
        let oracle = gradient_descent(k, &y, rho, 10_000);
        let c = sys.space.fusion_cost(&closed, &y, rho);
        let o = sys.space.fusion_cost(&oracle, &y, rho);
        assert!(c <= o * (1.0 + 1e-8), "{c} vs {o}");
    }
}

#[test]
fn download_matrix_and_closed_forms_agree() {
    let sys = bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for op in &sys.downloads {
        let l = op.matrix();
        assert!((l - l.transpose()).amax() == 0.0);
        assert!(op.norm() <= 1.0 + 1e-8);
        assert!(frobenius_rel(&(op.sqrt() * op.sqrt()), l) <= 1e-8);
        let p = op.projector();
        assert!((p * p - p).amax() <= 1e-10);
        let agent = sys.space.agent(op.agent());
        for _ in 0..20 {
            let b = random_vec(&mut rng, 5);
            let by_matrix = op.apply_matrix_form(&b);
            let alpha = op.apply_closed_form(&b);
            let by_closed = sys.space.phi_coords_agent(op.agent(), &alpha);
            assert!((&by_matrix - by_closed).amax() <= 1e-8);
            assert!((op.coefficient_map() * &b - &alpha).amax() <= 1e-8);
            assert!((agent.norm(&alpha) - by_matrix.norm()).abs() <= 1e-8 * by_matrix.norm().max(1.0));
        }
    }
}

#[test]
fn download_of_zero_is_zero() {
    let sys = bundled();
    let zero = sys.space.fused_function(DVector::zeros(10)).unwrap();
    for op in &sys.downloads {
        let f = download(&sys.space, op, &zero).unwrap();
        assert!(f.coefficients().amax() == 0.0);
    }
}

#[test]
fn agent1_functions_download_back_to_themselves_and_vanish_for_agent2() {
    let sys = bundled();
    let grid = linspace(-10.0, 10.0, 101);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let agent1 = sys.space.agent(0);
        let f = agent1.function(random_vec(&mut rng, 5)).unwrap();
        let up = upload(&sys.space, &f).unwrap();
        let back = download(&sys.space, &sys.downloads[0], &up).unwrap();
        let scale = grid.iter().fold(1.0f64, |m, &x| m.max(f.eval(x).abs()));
        for &x in &grid {
            assert!((back.eval(x) - f.eval(x)).abs() <= 1e-8 * scale);
        }
        let other = download(&sys.space, &sys.downloads[1], &up).unwrap();
        assert!(other.norm() <= 1e-8 * f.norm().max(1.0));
    }
}

#[test]
fn identical_agents_give_the_largest_normalization() {
    let sys = system_from(&two_agent_config("constant, monomial(1)", "constant, monomial(1)", "-1..1", "-1..1"));
    assert!((sys.c_d - 2.0).abs() < 1e-10);
    for op in &sys.downloads {
        assert!((op.norm() - 0.5).abs() < 1e-10);
    }
}

const FEATURES: [&str; 6] = ["constant", "monomial(1)", "monomial(2)", "monomial(3)", "exp(-1)", "exp(+1)"];

fn feature_list(mask: u8) -> String {
    FEATURES.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, f)| *f).collect::<Vec<_>>().join(", ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_feature_sets_respect_download_bounds(m1 in 1u8..64, m2 in 1u8..64, scaled in any::<bool>()) {
        let mut text = two_agent_config(&feature_list(m1), &feature_list(m2), "-2..2", "-2..2");
        if scaled {
            text = text.replace("[fusion]\n", "[fusion]\nnormalize_gram = full\n");
        }
        let sys = system_from(&text);
        for op in &sys.downloads {
            prop_assert!(op.norm() <= 1.0 + 1e-8);
            prop_assert!(op.eigenvalues().iter().all(|&l| l >= -1e-10));
            prop_assert!(frobenius_rel(&(op.sqrt() * op.sqrt()), op.matrix()) <= 1e-8);
        }
        prop_assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&sys.c_d));
        let sum = sys.downloads[0].matrix() + sys.downloads[1].matrix();
        prop_assert!((sum - DMatrix::identity(sys.m(), sys.m())).amax() < 1e-10);
    }
}
