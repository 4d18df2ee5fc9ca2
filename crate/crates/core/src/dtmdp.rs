//! The discrete-time model obtained by observing the process at its jump
//! epochs, with whole relaxed controls as actions.
//!
//! States are `(sojourn, post-jump state)` pairs plus an absorbing pair for
//! "no further jump". Kernel masses, absorption probabilities and one-step
//! costs are evaluated segment by segment along the flow; constant tails are
//! integrated in closed form.

use thiserror::Error;

use crate::control::RelaxedControl;
use crate::model::{ActionDistribution, JumpModel, PdmdpModel, PostJump, StatePoint};
use crate::profile::Profile;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtmdpError {
    #[error("sojourn must be positive, got {0}")]
    BadSojourn(f64),
    #[error("time window ({0}, {1}] is empty or not inside (0, inf]")]
    BadWindow(f64, f64),
    #[error("test function table does not match the model's modes and cells")]
    TableShape,
    #[error("test function values must be finite")]
    Unbounded,
    #[error("action values needed for the test family: one finite value per action")]
    ActionValues,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DtState<S> {
    Finite { sojourn: f64, state: S },
    /// `(inf, cemetery)`.
    Absorbing,
}

impl<S> DtState<S> {
    pub fn finite(sojourn: f64, state: S) -> Result<Self, DtmdpError> {
        if sojourn > 0.0 && !sojourn.is_nan() {
            Ok(DtState::Finite { sojourn, state })
        } else {
            Err(DtmdpError::BadSojourn(sojourn))
        }
    }
}

/// `int_{window} exp(-Lambda(t)) sum_j w_j(t) g(y_j(t)) dt` over the jumps
/// from `x` under `rho`. The landing state of each atom stays in one cell of
/// every grid on each segment, so `g` may be any cell-wise constant function.
pub fn integrate_kernel<M: JumpModel>(
    model: &M,
    x: &M::State,
    rho: &RelaxedControl,
    window: (f64, f64),
    g: impl Fn(&M::State) -> f64,
) -> f64 {
    let extra = model.base().grid().all_breakpoints();
    let profile = Profile::build(model, x, rho, &extra);
    let (lo, hi) = window;
    let mut total = 0.0;
    for seg in profile.segments() {
        let s = seg.start.max(lo);
        let e = seg.end.min(hi);
        if e <= s || seg.intensity <= 0.0 {
            continue;
        }
        let mu = &rho.pieces()[seg.piece];
        let weighted: f64 = model
            .jumps(&seg.state, &seg.state, mu)
            .iter()
            .map(|j| j.weight * g(&j.to))
            .sum();
        if weighted == 0.0 {
            continue;
        }
        let q = seg.intensity;
        let survive = (-(seg.lambda_start + q * (s - seg.start))).exp();
        // int_s^e exp(-q (t - s)) dt, exact for an infinite end
        let span = if e.is_infinite() { 1.0 / q } else { -(-q * (e - s)).exp_m1() / q };
        total += weighted * survive * span;
    }
    total
}

/// `p(Gamma_1 x window | from, rho)` with `Gamma_1` the listed target modes.
pub fn kernel_mass<M: JumpModel>(
    model: &M,
    from: &DtState<M::State>,
    rho: &RelaxedControl,
    target_modes: &[usize],
    window: (f64, f64),
) -> Result<f64, DtmdpError> {
    let (lo, hi) = window;
    if lo.is_nan() || hi.is_nan() || lo < 0.0 || hi <= lo {
        return Err(DtmdpError::BadWindow(lo, hi));
    }
    let DtState::Finite { state, .. } = from else {
        return Ok(0.0);
    };
    Ok(integrate_kernel(model, state, rho, window, |y| {
        if target_modes.contains(&model.point(y).mode) {
            1.0
        } else {
            0.0
        }
    }))
}

/// `p({(inf, cemetery)} | from, rho) = exp(-Lambda(inf))`; exactly 0 when the
/// integrated intensity diverges.
pub fn absorption_mass<M: JumpModel>(model: &M, from: &DtState<M::State>, rho: &RelaxedControl) -> f64 {
    match from {
        DtState::Absorbing => 1.0,
        DtState::Finite { state, .. } => (-Profile::build(model, state, rho, &[]).total_intensity()).exp(),
    }
}

/// `l(from, rho, (tau, y)) = int_0^tau c(phi(x, s), rho_s) ds`.
pub fn one_step_cost<M: JumpModel>(model: &M, from: &DtState<M::State>, rho: &RelaxedControl, tau: f64) -> f64 {
    match from {
        DtState::Absorbing => 0.0,
        DtState::Finite { state, .. } => Profile::build(model, state, rho, &[]).cost_integral(tau),
    }
}

/// A bounded function on the discrete-time state space, constant on each
/// (mode, cell) and independent of the sojourn coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeFunction {
    table: Vec<Vec<f64>>,
    absorbing: f64,
}

impl ProbeFunction {
    pub fn new(model: &PdmdpModel, table: Vec<Vec<f64>>, absorbing: f64) -> Result<Self, DtmdpError> {
        let shape_ok = table.len() == model.mode_count()
            && table
                .iter()
                .enumerate()
                .all(|(m, row)| row.len() == model.grid().cell_count(m));
        if !shape_ok {
            return Err(DtmdpError::TableShape);
        }
        if !absorbing.is_finite() || table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DtmdpError::Unbounded);
        }
        Ok(Self { table, absorbing })
    }

    /// The indicator of the absorbing pair.
    pub fn absorption_indicator(model: &PdmdpModel) -> Self {
        let table = (0..model.mode_count())
            .map(|m| vec![0.0; model.grid().cell_count(m)])
            .collect();
        Self { table, absorbing: 1.0 }
    }

    pub fn at(&self, model: &PdmdpModel, y: &StatePoint) -> f64 {
        self.table[y.mode][model.cell_of(y)]
    }

    pub fn absorbing(&self) -> f64 {
        self.absorbing
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }
}

/// `int f dp(. | from, rho)`.
pub fn integrate_probe<M: JumpModel>(model: &M, from: &DtState<M::State>, rho: &RelaxedControl, f: &ProbeFunction) -> f64 {
    match from {
        DtState::Absorbing => f.absorbing,
        DtState::Finite { state, .. } => {
            let base = model.base();
            let jumps = integrate_kernel(model, state, rho, (0.0, f64::INFINITY), |y| f.at(base, &model.point(y)));
            let absorb = absorption_mass(model, from, rho);
            // 0 * f_abs stays 0 even when the absorption mass underflows
            jumps + if absorb == 0.0 { 0.0 } else { absorb * f.absorbing }
        }
    }
}

/// Test functions `g_{k,j}(t, a) = t^k e^{-t} / k! * v(a)^j` for an embedding
/// `v` of the actions into the reals. Each is continuous in `a` and
/// dominated by an integrable function of `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct YoungFamily {
    values: Vec<f64>,
    degrees: Vec<usize>,
    powers: Vec<i32>,
}

impl YoungFamily {
    pub fn new(values: Vec<f64>, degrees: Vec<usize>, powers: Vec<i32>) -> Result<Self, DtmdpError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(DtmdpError::ActionValues);
        }
        Ok(Self {
            values,
            degrees,
            powers,
        })
    }

    /// `k in {0, 1, 2}`, `j in {1, 2}` over the model's action values.
    pub fn standard(model: &PdmdpModel) -> Result<Self, DtmdpError> {
        let values = model.action_values().ok_or(DtmdpError::ActionValues)?.to_vec();
        Self::new(values, vec![0, 1, 2], vec![1, 2])
    }

    pub fn len(&self) -> usize {
        self.degrees.len() * self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `int_0^inf g(t, rho_t) dt` for every member, in (degree, power) order.
    pub fn integrals(&self, rho: &RelaxedControl) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.degrees {
            for &j in &self.powers {
                let mut total = 0.0;
                let mut start = 0.0;
                for (p, mu) in rho.pieces().iter().enumerate() {
                    let end = rho.breakpoints().get(p).copied().unwrap_or(f64::INFINITY);
                    let mass = gamma_tail(k, start) - gamma_tail(k, end);
                    total += mass * self.action_moment(mu, j);
                    start = end;
                }
                out.push(total);
            }
        }
        out
    }

    fn action_moment(&self, mu: &ActionDistribution, j: i32) -> f64 {
        mu.support().map(|(a, w)| w * self.values[a].powi(j)).sum()
    }
}

/// `int_x^inf t^k e^{-t} / k! dt = e^{-x} sum_{i <= k} x^i / i!`.
fn gamma_tail(k: usize, x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..=k {
        term *= x / i as f64;
        sum += term;
    }
    (-x).exp() * sum
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub index: usize,
    pub at_sequence: f64,
    pub at_limit: f64,
    pub gap: f64,
    /// `max_g |int g(t, rho^(n)_t) dt - int g(t, rho_t) dt|`.
    pub max_young_gap: f64,
}

/// Compare `int f dp` along a control sequence with its value at the limit,
/// alongside the test-family evidence that the sequence converges.
pub fn continuity_probe<M: JumpModel>(
    model: &M,
    from: &DtState<M::State>,
    sequence: &[RelaxedControl],
    limit: &RelaxedControl,
    f: &ProbeFunction,
    family: &YoungFamily,
) -> Vec<ProbeRow> {
    let at_limit = integrate_probe(model, from, limit, f);
    let young_limit = family.integrals(limit);
    sequence
        .iter()
        .enumerate()
        .map(|(index, rho)| {
            let at_sequence = integrate_probe(model, from, rho, f);
            let max_young_gap = family
                .integrals(rho)
                .iter()
                .zip(&young_limit)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            ProbeRow {
                index,
                at_sequence,
                at_limit,
                gap: (at_sequence - at_limit).abs(),
                max_young_gap,
            }
        })
        .collect()
}

/// The two-point example with intensity equal to the action: modes `x1`,
/// `x2` jumping to each other, no drift, no cost. Actions are `0` and `1/n`
/// for each requested `n`, in that order.
pub fn example_a1_model(ns: &[usize]) -> PdmdpModel {
    let mut labels = vec!["0".to_string()];
    let mut values = vec![0.0];
    for &n in ns {
        let label = format!("1/{n}");
        if !labels.contains(&label) {
            labels.push(label);
            values.push(1.0 / n as f64);
        }
    }
    let mut b = PdmdpModel::builder(vec!["x1".to_string(), "x2".to_string()], labels.clone());
    for (label, &v) in labels.iter().zip(&values).filter(|(_, v)| **v > 0.0) {
        b = b
            .rate("x1", 0, label, "x2", v, PostJump::Keep)
            .rate("x2", 0, label, "x1", v, PostJump::Keep);
    }
    b.action_values(values).build().expect("preset is well formed")
}

/// The constant controls `delta_{1/n}` and their limit `delta_0` on
/// [`example_a1_model`].
pub fn example_a1_controls(model: &PdmdpModel, ns: &[usize]) -> (Vec<RelaxedControl>, RelaxedControl) {
    let k = model.action_count();
    let seq = ns
        .iter()
        .map(|n| {
            let a = model.actions().index_of(&format!("1/{n}")).expect("action exists");
            RelaxedControl::constant(ActionDistribution::dirac(k, a))
        })
        .collect();
    (seq, RelaxedControl::constant(ActionDistribution::dirac(k, 0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate2() -> PdmdpModel {
        PdmdpModel::builder(["s1", "s2"], ["a"])
            .rate("s1", 0, "a", "s2", 2.0, PostJump::Keep)
            .build()
            .unwrap()
    }

    fn from() -> DtState<StatePoint> {
        DtState::finite(1.0, StatePoint::new(0, 0.0)).unwrap()
    }

    fn only() -> RelaxedControl {
        RelaxedControl::constant(ActionDistribution::dirac(1, 0))
    }

    #[test]
    fn exponential_windows() {
        let m = rate2();
        let full = kernel_mass(&m, &from(), &only(), &[1], (0.0, f64::INFINITY)).unwrap();
        assert!((full - 1.0).abs() < 1e-15);
        let half = kernel_mass(&m, &from(), &only(), &[1], (0.0, 0.5)).unwrap();
        assert!((half - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(kernel_mass(&m, &from(), &only(), &[0], (0.0, 1.0)).unwrap(), 0.0);
        assert!(kernel_mass(&m, &from(), &only(), &[1], (1.0, 0.5)).is_err());
        assert_eq!(kernel_mass(&m, &DtState::Absorbing, &only(), &[1], (0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn absorption_cases() {
        let zero = PdmdpModel::builder(["s"], ["a"]).build().unwrap();
        assert_eq!(absorption_mass(&zero, &from(), &only()), 1.0);
        assert_eq!(absorption_mass(&rate2(), &from(), &only()), 0.0);

        let m = PdmdpModel::builder(["s1", "s2"], ["off", "on"])
            .rate("s1", 0, "on", "s2", 2.0, PostJump::Keep)
            .build()
            .unwrap();
        let rho = RelaxedControl::new(vec![5.0], vec![ActionDistribution::dirac(2, 1)], ActionDistribution::dirac(2, 0))
            .unwrap();
        assert!((absorption_mass(&m, &from(), &rho) - (-10.0f64).exp()).abs() < 1e-18);
    }

    #[test]
    fn cost_over_crossing() {
        let m = PdmdpModel::builder(["s"], ["a"])
            .drift("s", 1.0)
            .grid("s", vec![1.0])
            .cost("s", 0, "a", 1.0)
            .cost("s", 1, "a", 3.0)
            .build()
            .unwrap();
        assert_eq!(one_step_cost(&m, &from(), &only(), 2.0), 4.0);
        assert_eq!(one_step_cost(&m, &DtState::Absorbing, &only(), 2.0), 0.0);
    }

    #[test]
    fn gamma_tail_values() {
        assert_eq!(gamma_tail(0, 0.0), 1.0);
        assert_eq!(gamma_tail(2, 0.0), 1.0);
        assert!((gamma_tail(1, 1.0) - 2.0 * (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn example_a1_gap_is_one() {
        let ns = [1, 2, 10, 100];
        let m = example_a1_model(&ns);
        let (seq, lim) = example_a1_controls(&m, &ns);
        let f = ProbeFunction::absorption_indicator(&m);
        let fam = YoungFamily::standard(&m).unwrap();
        let rows = continuity_probe(&m, &from(), &seq, &lim, &f, &fam);
        for (r, n) in rows.iter().zip(ns) {
            assert_eq!(r.at_sequence, 0.0);
            assert_eq!(r.at_limit, 1.0);
            assert_eq!(r.gap, 1.0);
            assert!((r.max_young_gap - 1.0 / n as f64).abs() < 1e-15);
        }
    }
}
