use pdmdp_core::model::{ActionDistribution, PdmdpModel, PostJump, StatePoint};
use pdmdp_core::rng::path_rng;
use pdmdp_core::sim::{
    simulate_paths, simulate_trajectory, ControlPolicy, History, Limits, MarkovPolicy, MonteCarlo, StationaryPolicy,
    Termination,
};
use pdmdp_core::uniformizer::{
    aux_kernel_identity_check, build_auxiliary, classify_and_thin, equivalence_test, lift_policy, thin_history,
    AuxState, EquivalenceConfig, Parity, Statistic, UniformizerError,
};
use pdmdp_core::RelaxedControl;

fn switch_model() -> PdmdpModel {
    PdmdpModel::builder(["s", "t"], ["a", "b"])
        .rate("s", 0, "a", "t", 1.0, PostJump::Keep)
        .rate("s", 0, "b", "t", 2.0, PostJump::Keep)
        .build()
        .unwrap()
}

fn switch_control() -> RelaxedControl {
    RelaxedControl::new(vec![1.0], vec![ActionDistribution::dirac(2, 0)], ActionDistribution::dirac(2, 1)).unwrap()
}

fn plus(x: StatePoint) -> AuxState {
    AuxState::new(x, Parity::Plus)
}

#[test]
fn lifted_switch_moves_back_by_the_fictitious_time() {
    let policy = lift_policy(MarkovPolicy::new(vec![switch_control()]).unwrap());
    let x = StatePoint::new(0, 0.0);
    let mut h = History::new(plus(x));
    h.push(AuxState::new(x, Parity::Minus), 0.6, true);
    let c = policy.control(&h);
    assert_eq!(c.breakpoints().len(), 1);
    assert!((c.breakpoints()[0] - 0.4).abs() < 1e-15);
    assert_eq!(c.at(0.3).as_dirac(), Some(0));
    assert_eq!(c.at(0.5).as_dirac(), Some(1));
}

#[test]
fn no_fictitious_jumps_means_plain_delegation() {
    let inner = MarkovPolicy::new(vec![switch_control(), RelaxedControl::constant(ActionDistribution::dirac(2, 1))])
        .unwrap();
    let policy = lift_policy(inner.clone());
    let mut h = History::new(plus(StatePoint::new(0, 0.0)));
    assert_eq!(policy.control(&h), inner.for_jump(0).clone());
    h.push(plus(StatePoint::new(1, 0.0)), 0.3, false);
    assert_eq!(policy.control(&h), inner.for_jump(1).clone());
    let (thinned, offset) = thin_history(&h);
    assert_eq!(thinned.jumps(), 1);
    assert_eq!(offset, 0.0);
}

#[test]
fn lifted_stationary_policy_ignores_parity() {
    let m = switch_model();
    let inner = StationaryPolicy::constant(&m, 1);
    let policy = lift_policy(inner);
    let x = StatePoint::new(0, 0.0);
    let a = policy.control(&History::new(AuxState::new(x, Parity::Plus)));
    let b = policy.control(&History::new(AuxState::new(x, Parity::Minus)));
    assert_eq!(a, b);
}

#[test]
fn all_fictitious_trajectory_keeps_only_the_initial_mark() {
    let m = PdmdpModel::builder(["s"], ["a"]).build().unwrap();
    let aux = build_auxiliary(&m, 1.0).unwrap();
    let policy = lift_policy(StationaryPolicy::constant(&m, 0));
    let t = simulate_trajectory(
        &mut path_rng(3, 0),
        &aux,
        &policy,
        plus(StatePoint::new(0, 0.0)),
        Limits {
            max_fictitious: 20,
            ..Limits::new(usize::MAX, f64::INFINITY)
        },
    );
    assert_eq!(t.terminated_by, Termination::FictitiousBudget);
    assert_eq!(t.history.jumps(), 20);
    let thinned = classify_and_thin(&aux, &t).unwrap();
    assert_eq!(thinned.honest_jumps(), 0);
    assert_eq!(thinned.fictitious, vec![20]);
}

#[test]
fn alternating_labels_sum_the_sojourns() {
    let m = PdmdpModel::builder(["s", "t"], ["a"])
        .rate("s", 0, "a", "t", 1.0, PostJump::Keep)
        .rate("t", 0, "a", "s", 1.0, PostJump::Keep)
        .build()
        .unwrap();
    let aux = build_auxiliary(&m, 1.0).unwrap();
    let s = StatePoint::new(0, 0.0);
    let t = StatePoint::new(1, 0.0);
    // fictitious, honest, fictitious, honest
    let mut h = History::new(plus(s));
    h.push(AuxState::new(s, Parity::Minus), 0.5, true);
    h.push(AuxState::new(t, Parity::Minus), 0.25, false);
    h.push(AuxState::new(t, Parity::Plus), 1.0, true);
    h.push(AuxState::new(s, Parity::Plus), 0.125, false);
    let traj = pdmdp_core::sim::Trajectory {
        history: h,
        terminated_by: Termination::JumpBudget,
        cost_integral: 0.0,
    };
    let thinned = classify_and_thin(&aux, &traj).unwrap();
    assert_eq!(thinned.marks, vec![(0.0, s), (0.75, t), (1.875, s)]);
    assert_eq!(thinned.sojourns(), vec![0.75, 1.125]);
    assert_eq!(thinned.fictitious, vec![1, 1, 0]);
}

#[test]
fn mislabelled_jump_is_rejected() {
    let m = switch_model();
    let aux = build_auxiliary(&m, 1.0).unwrap();
    let s = StatePoint::new(0, 0.0);
    let mut h = History::new(plus(s));
    // parity flipped but the sampler claims an honest jump
    h.push(AuxState::new(s, Parity::Minus), 0.5, false);
    let traj = pdmdp_core::sim::Trajectory {
        history: h,
        terminated_by: Termination::JumpBudget,
        cost_integral: 0.0,
    };
    assert!(matches!(classify_and_thin(&aux, &traj), Err(UniformizerError::LabelMismatch { .. })));
}

#[test]
fn simulated_labels_agree_on_zero_drift_model() {
    let m = switch_model();
    let aux = build_auxiliary(&m, 2.0).unwrap();
    let policy = lift_policy(MarkovPolicy::new(vec![switch_control()]).unwrap());
    let mc = MonteCarlo {
        n_paths: 2000,
        seed: 5,
        limits: Limits::new(10, 20.0),
    };
    for t in simulate_paths(&aux, &policy, &plus(StatePoint::new(0, 0.0)), &mc) {
        let thinned = classify_and_thin(&aux, &t).unwrap();
        assert!(thinned.honest_jumps() <= 1);
    }
}

#[test]
fn identity_special_functions() {
    let m = switch_model();
    let aux = build_auxiliary(&m, 1.5).unwrap();
    let x = StatePoint::new(0, 0.0);
    for a in 0..2 {
        let q = m.intensity(&x, a);
        let one = aux_kernel_identity_check(&aux, |_| 1.0, x, Parity::Plus, a);
        assert!((one.lhs - (q + 1.5)).abs() < 1e-12 && (one.rhs - (q + 1.5)).abs() < 1e-12);
        let other = aux_kernel_identity_check(&aux, |y| f64::from(u8::from(y.parity == Parity::Minus)), x, Parity::Plus, a);
        assert!((other.lhs - 1.5).abs() < 1e-12 && (other.rhs - 1.5).abs() < 1e-12);
        let same = aux_kernel_identity_check(&aux, |y| f64::from(u8::from(y.parity == Parity::Plus)), x, Parity::Plus, a);
        assert!((same.lhs - q).abs() < 1e-12 && (same.rhs - q).abs() < 1e-12);
    }
}

#[test]
fn equivalence_with_zero_kernel_passes_trivially() {
    let m = PdmdpModel::builder(["s"], ["a"]).cost("s", 0, "a", 0.5).build().unwrap();
    let cfg = EquivalenceConfig {
        n_paths: 2000,
        ..EquivalenceConfig::default()
    };
    let report = equivalence_test(&m, &StationaryPolicy::constant(&m, 0), StatePoint::new(0, 0.0), &cfg).unwrap();
    assert!(report.passes(), "{:?}", report.rows);
    assert!(report.rows_for(Statistic::SojournKs).all(|r| r.value == 0.0));
}

#[test]
fn equivalence_of_unit_rates() {
    let m = PdmdpModel::builder(["s", "t"], ["a"])
        .rate("s", 0, "a", "t", 1.0, PostJump::Keep)
        .build()
        .unwrap();
    let cfg = EquivalenceConfig::default();
    let report = equivalence_test(&m, &StationaryPolicy::constant(&m, 0), StatePoint::new(0, 0.0), &cfg).unwrap();
    let first = report.rows_for(Statistic::SojournKs).find(|r| r.jump_index == 1).unwrap();
    assert!(first.value < first.threshold, "{first:?}");
    let counts = report.rows_for(Statistic::FictitiousCount).next().expect("constant intensity row");
    assert!(counts.pass, "{counts:?}");
}

#[test]
fn bad_lambda_is_rejected() {
    let m = switch_model();
    assert!(build_auxiliary(&m, 0.0).is_err());
    assert!(build_auxiliary(&m, f64::NAN).is_err());
}
