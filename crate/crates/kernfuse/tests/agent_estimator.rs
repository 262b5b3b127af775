use std::sync::Arc;

use kernfuse::agent_estimator::*;
use kernfuse::harness::{assemble, parse_config, BUNDLED_CONFIG};
use kernfuse::learning_runtime::Schedule;
use kernfuse::rkhs_core::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn bundled_agent(i: usize) -> Arc<AgentSpace> {
    let cfg = parse_config(BUNDLED_CONFIG).unwrap();
    assemble(&cfg).unwrap().system.space.agent(i).clone()
}

fn state(space: &Arc<AgentSpace>) -> AgentState {
    AgentState::new(space.clone(), Schedule::Constant(1.0))
}

fn tiny_agent() -> Arc<AgentSpace> {
    let f = FeatureSet::unchecked(vec![Feature::Constant, Feature::Monomial(1)]).unwrap();
    let a = AnchorSet::new(vec![0.0], SpaceTag::Agent1).unwrap();
    Arc::new(AgentSpace::new(0, f, &a, Domain::interval(-1.0, 1.0).unwrap(), 16).unwrap())
}

#[test]
fn scalar_local_estimate() {
    let s = state(&tiny_agent());
    let f = local_estimate(&s, DataPoint { x: 0.0, y: 1.0 }, 1.0).unwrap();
    assert!((f.coefficients()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn consistent_data_keeps_the_prior() {
    let space = bundled_agent(0);
    let prior = space.canonical(&DVector::from_vec(vec![0.1, -0.2, 0.05, 0.3, 0.0]));
    let x = 1.3;
    let d = DataPoint { x, y: space.eval(&prior, x) };
    let est = space.local_estimate_coeffs(&prior, d, 2.0).unwrap();
    assert!((est - &prior).amax() < 1e-10);
}

#[test]
fn huge_regularization_keeps_the_prior() {
    let space = bundled_agent(1);
    let prior = space.canonical(&DVector::from_vec(vec![1e-3, 2e-3, -1e-3, 0.0, 5e-4]));
    let est = space.local_estimate_coeffs(&prior, DataPoint { x: 7.0, y: 3.0 }, 1e12).unwrap();
    assert!((est - &prior).norm() <= 1e-6);
}

#[test]
fn nonpositive_rho_is_rejected() {
    let space = bundled_agent(0);
    let prior = DVector::zeros(5);
    for rho in [0.0, -1.0, f64::INFINITY] {
        assert_eq!(
            space.local_estimate_coeffs(&prior, DataPoint { x: 0.0, y: 1.0 }, rho),
            Err(RkhsError::InvalidRho(rho))
        );
    }
}

#[test]
fn data_embedding() {
    let space = bundled_agent(0);
    let s = state(&space);
    let psi = embed_data(&s, DataPoint { x: 1.0, y: 2.0 });
    let expected: Vec<f64> = [0.0, 2.0, 4.0, -2.0, -4.0].iter().map(|&a| 2.0 * (1.0 + a + a * a)).collect();
    assert_eq!(psi.function.coefficients().as_slice(), expected.as_slice());
    let zero = embed_data(&s, DataPoint { x: 1.0, y: 0.0 });
    assert!(zero.function.coefficients().iter().all(|&c| c == 0.0));
    let double = embed_data(&s, DataPoint { x: 1.0, y: 4.0 });
    assert_eq!(double.function.coefficients(), &(psi.function.coefficients() * 2.0));
}

#[test]
fn learning_operator_on_zero_is_zero() {
    let space = bundled_agent(0);
    let s = state(&space);
    let psi = embed_data(&s, DataPoint { x: 0.7, y: 0.0 });
    let out = apply_learning_operator(&s, &space.zero_function(), &psi, 3.0).unwrap();
    assert!(out.coefficients().iter().all(|&c| c == 0.0));
}

#[test]
fn learning_operator_rejects_foreign_functions() {
    let a1 = bundled_agent(0);
    let a2 = bundled_agent(1);
    let s = state(&a1);
    let psi = embed_data(&s, DataPoint { x: 0.7, y: 1.0 });
    let err = apply_learning_operator(&s, &a2.zero_function(), &psi, 3.0).unwrap_err();
    assert_eq!(err, RkhsError::MixedSpace(SpaceTag::Agent2, SpaceTag::Agent1));
}

#[test]
fn agent_norm_near_one_at_large_rho() {
    let space = bundled_agent(0);
    let n = agent_operator_norm(&space, 1e8, space.grid()).unwrap();
    assert!((0.98..=1.02).contains(&n.norm), "{}", n.norm);
    assert_eq!(n.skipped, 0);
}

#[test]
fn agent_norm_never_drops_under_grid_refinement() {
    let space = bundled_agent(1);
    let coarse = space.domain().grid(8);
    let fine: Vec<f64> = coarse.iter().copied().chain(space.domain().grid(33)).collect();
    for rho in [1e-2, 1.0, 1e2] {
        let a = agent_operator_norm(&space, rho, &coarse).unwrap().norm;
        let b = agent_operator_norm(&space, rho, &fine).unwrap().norm;
        assert!(a.is_finite() && a >= 0.0);
        assert!(b >= a);
    }
}

#[test]
fn learning_matrix_matches_direct_application() {
    let space = bundled_agent(0);
    let x = 2.5;
    let rho = 4.0;
    let c = learning_operator_coefficients(&space, x, rho).unwrap().unwrap();
    let alpha = space.canonical(&DVector::from_vec(vec![0.2, -0.1, 0.4, 0.0, 0.3]));
    let y = -1.5;
    let k = space.kernel_column(x);
    let scale = k.dot(&(space.gram() * &k)).sqrt();
    let mut input = space.to_orthonormal(&alpha).as_slice().to_vec();
    input.push(y * scale);
    let via_matrix = &c * DVector::from_vec(input);
    let direct = space.learning_step(&alpha, &(k * y), x, rho).unwrap();
    assert!((via_matrix - direct).amax() < 1e-10);
}

proptest! {
    #[test]
    fn operator_matches_local_estimate(
        c in prop::collection::vec(-1.0f64..1.0, 5),
        x in -5.0f64..5.0,
        y in -10.0f64..10.0,
        log_rho in -3.0f64..3.0,
    ) {
        let space = bundled_agent(0);
        let rho = 10f64.powf(log_rho);
        let prior = space.function(space.canonical(&DVector::from_vec(c))).unwrap();
        let s = AgentState::with_estimate(space.clone(), prior.clone(), Schedule::Constant(rho)).unwrap();
        let d = DataPoint { x, y };
        let a = local_estimate(&s, d, rho).unwrap();
        let b = apply_learning_operator(&s, &prior, &embed_data(&s, d), rho).unwrap();
        prop_assert!((a.coefficients() - b.coefficients()).amax() <= 1e-12);
    }

    #[test]
    fn learning_operator_is_additive(
        c1 in prop::collection::vec(-1.0f64..1.0, 5),
        c2 in prop::collection::vec(-1.0f64..1.0, 5),
        x in 5.0f64..10.0,
        y in -10.0f64..10.0,
    ) {
        let space = bundled_agent(1);
        let s = state(&space);
        let f1 = space.function(DVector::from_vec(c1)).unwrap();
        let f2 = space.function(DVector::from_vec(c2)).unwrap();
        let sum = space.function(f1.coefficients() + f2.coefficients()).unwrap();
        let psi = embed_data(&s, DataPoint { x, y });
        let theta = embed_data(&s, DataPoint { x, y: 0.0 });
        let lhs = apply_learning_operator(&s, &sum, &psi, 2.0).unwrap();
        let r1 = apply_learning_operator(&s, &f1, &psi, 2.0).unwrap();
        let r2 = apply_learning_operator(&s, &f2, &theta, 2.0).unwrap();
        let rhs = r1.coefficients() + r2.coefficients();
        let scale = lhs.coefficients().amax().max(1.0);
        prop_assert!((lhs.coefficients() - rhs).amax() <= 1e-12 * scale * 1e3);
    }

    #[test]
    fn gradient_matches_finite_differences(
        a in prop::collection::vec(-1.0f64..1.0, 5),
        p in prop::collection::vec(-1.0f64..1.0, 5),
        x in -5.0f64..5.0,
        y in -10.0f64..10.0,
    ) {
        let space = bundled_agent(0);
        let alpha = DVector::from_vec(a);
        let prior = DVector::from_vec(p);
        let d = DataPoint { x, y };
        let rho = 0.5;
        let g = space.local_cost_gradient(&alpha, &prior, d, rho);
        let h = 1e-5;
        for j in 0..5 {
            let mut up = alpha.clone();
            up[j] += h;
            let mut down = alpha.clone();
            down[j] -= h;
            let fd = (space.local_cost(&up, &prior, d, rho) - space.local_cost(&down, &prior, d, rho)) / (2.0 * h);
            prop_assert!((fd - g[j]).abs() <= 1e-4 * g.amax().max(1.0), "{} vs {}", fd, g[j]);
        }
    }
}
