use pdmdp_core::io::{bundled, parse_model};
use pdmdp_core::model::{PdmdpModel, PostJump, StatePoint};
use pdmdp_core::solver::{
    extract_selector, oe_residual, refinement_gap, solve_direct, solve_via_auxiliary, value_iterate, NodeGrid,
    SolverConfig, Value, ValueTable,
};

fn two_state(q: f64, c: f64) -> PdmdpModel {
    PdmdpModel::builder(["s1", "s2"], ["a"])
        .rate("s1", 0, "a", "s2", q, PostJump::Keep)
        .cost("s1", 0, "a", c)
        .build()
        .unwrap()
}

fn two_actions(q: [f64; 2]) -> PdmdpModel {
    PdmdpModel::builder(["s1", "s2"], ["slow", "quick"])
        .rate("s1", 0, "slow", "s2", q[0], PostJump::Keep)
        .rate("s1", 0, "quick", "s2", q[1], PostJump::Keep)
        .cost("s1", 0, "slow", 1.0)
        .cost("s1", 0, "quick", 1.0)
        .build()
        .unwrap()
}

#[test]
fn two_state_closed_form() {
    let s = solve_direct(&two_state(2.0, 1.0), &SolverConfig::default()).unwrap();
    assert!(s.solution.converged);
    assert!((s.solution.values.get(0, 0, 0).as_f64() - 2.0).abs() < 1e-8);
    assert_eq!(s.solution.values.get(1, 0, 0), Value::Finite(1.0));
}

#[test]
fn divergent_state_leaves_the_finite_set() {
    let s = value_iterate(&two_state(1.0, 1.0), &SolverConfig::default()).unwrap();
    assert_eq!(s.values.get(0, 0, 0), Value::Infinite);
    assert_eq!(s.values.finite_flags(), vec![false, true]);
}

#[test]
fn iterates_are_monotone_and_at_least_one() {
    for text in [bundled::CTMDP2, bundled::DRIFTLINE, bundled::EXAMPLE_A1, bundled::CTMDP2_DIVERGENT] {
        let m = parse_model(text, "bundled").unwrap();
        let s = value_iterate(&m, &SolverConfig::default()).unwrap();
        assert!(s.values.values().iter().all(|v| !v.is_finite() || v.as_f64() >= 1.0));
        // Residuals of a monotone, convergent iteration end below tolerance.
        if s.converged {
            assert!(*s.residual_trace.last().unwrap() <= SolverConfig::default().tolerance);
        }
    }
}

#[test]
fn selector_prefers_the_faster_exit() {
    // 2/(2-1) = 2 against 3/(3-1) = 1.5
    let s = solve_direct(&two_actions([2.0, 3.0]), &SolverConfig::default()).unwrap();
    assert!((s.solution.values.get(0, 0, 0).as_f64() - 1.5).abs() < 1e-8);
    assert_eq!(s.selector.actions[0][0], 1);
}

#[test]
fn selector_ties_pick_the_first_action() {
    let s = solve_direct(&two_actions([2.0, 2.0]), &SolverConfig::default()).unwrap();
    assert_eq!(s.selector.actions[0][0], 0);
    let single = solve_direct(&two_state(2.0, 1.0), &SolverConfig::default()).unwrap();
    assert!(single.selector.actions.iter().flatten().all(|a| *a == 0));
}

#[test]
fn auxiliary_zero_cost_is_one_with_no_gap() {
    let m = two_state(2.0, 0.0);
    let s = solve_via_auxiliary(&m, 1.0, &SolverConfig::default()).unwrap();
    assert_eq!(s.parity_gap, 0.0);
    assert!(s.solution.values.values().iter().all(|v| *v == Value::Finite(1.0)));
}

#[test]
fn auxiliary_matches_direct() {
    let cfg = SolverConfig::default();
    for q in [[2.0, 3.0], [3.0, 2.0]] {
        let m = two_actions(q);
        let direct = solve_direct(&m, &cfg).unwrap();
        let aux = solve_via_auxiliary(&m, 1.0, &cfg).unwrap();
        assert!(aux.parity_gap < 1e-12);
        assert_eq!(aux.selector.actions, direct.selector.actions);
        let d = direct.solution.values.get(0, 0, 0).as_f64();
        let a = aux.values.get(0, 0, 0).as_f64();
        assert!((a - d).abs() < 1e-6, "{a} vs {d}");
    }
}

#[test]
fn residual_vanishes_for_trivial_and_converged_values() {
    let cfg = SolverConfig::default();
    let zero = two_state(2.0, 0.0);
    let ones = ValueTable::constant(NodeGrid::for_model(&zero), 1, 1.0);
    for t in [0.0, 0.5, 3.0] {
        assert_eq!(oe_residual(&zero, &ones, StatePoint::new(0, 0.0), t).unwrap(), 0.0);
    }
    let m = two_state(2.0, 1.0);
    let s = value_iterate(&m, &cfg).unwrap();
    for t in [0.1, 1.0, 7.5] {
        let r = oe_residual(&m, &s.values, StatePoint::new(0, 0.0), t).unwrap();
        assert!(r.abs() < 10.0 * cfg.tolerance, "t={t}: {r}");
    }
    let mut bumped = s.values.clone();
    bumped.set(0, 0, 0, Value::Finite(s.values.get(0, 0, 0).as_f64() + 0.1));
    let r = oe_residual(&m, &bumped, StatePoint::new(0, 0.0), 1.0).unwrap();
    assert!(r.abs() > 0.05, "{r}");
    assert!(extract_selector(&m, &bumped).is_ok());
}

#[test]
fn driftline_refinement_is_stable() {
    let m = parse_model(bundled::DRIFTLINE, "driftline").unwrap();
    let gap = refinement_gap(&m, &SolverConfig::default()).unwrap();
    assert!(gap.is_some_and(|g| g < 1e-8), "{gap:?}");
}
