use pdmdp_core::dtmdp::{continuity_probe, example_a1_controls, example_a1_model, DtState, ProbeFunction, YoungFamily};
use pdmdp_core::model::StatePoint;
use pdmdp_core::uniformizer::{build_auxiliary, AuxState, Parity};

/// The standard family includes `e^(-t) v(a)`, whose gap against the limit
/// control is exactly `1/n`, so this target is out of reach at `n = 100`.
#[test]
#[ignore = "unattainable: the Young gap at n = 100 is exactly 1e-2"]
fn young_gap_at_hundred_is_below_target() {
    let ns = [100];
    let m = example_a1_model(&ns);
    let (seq, limit) = example_a1_controls(&m, &ns);
    let aux = build_auxiliary(&m, 1.0).unwrap();
    let family = YoungFamily::standard(&m).unwrap();
    let from = DtState::finite(1.0, AuxState::new(StatePoint::new(0, 0.0), Parity::Plus)).unwrap();
    let rows = continuity_probe(&aux, &from, &seq, &limit, &ProbeFunction::absorption_indicator(&m), &family);
    let gap = rows[0].max_young_gap;
    assert!(gap < 1e-3, "Young gap {gap}");
}
