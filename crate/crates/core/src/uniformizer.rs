//! Uniformization by parity-flipping inspections.
//!
//! The auxiliary model lives on `S x {-1, +1}`. On top of the base kernel
//! (which keeps the parity) it carries a rate-`lambda` channel that leaves
//! the base point on its flow and flips the parity. Thinning out the flips
//! recovers a process with the law of the original one under the lifted policy.

use std::fmt;

use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::control::RelaxedControl;
use crate::model::{ActionDistribution, Jump, JumpModel, PdmdpModel, StatePoint};
use crate::profile::Profile;
use crate::rng::sibling_seed;
use crate::sim::{
    risk_from_exponents, simulate_paths, ControlPolicy, History, Limits, MonteCarlo, RiskEstimate,
    Termination, Trajectory,
};
use crate::stats::{chi_square_goodness_of_fit, chi_square_homogeneity, dkw_two_sample_threshold, ks_distance, CONFIDENCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UniformizerError {
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error(
        "jump {jump}: sampler label fictitious={sampler}, parity flip={parity_flip}, mark on flow={on_flow}"
    )]
    LabelMismatch {
        jump: usize,
        sampler: bool,
        parity_flip: bool,
        on_flow: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Parity {
    Plus,
    Minus,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Plus => Parity::Minus,
            Parity::Minus => Parity::Plus,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Parity::Plus => 1,
            Parity::Minus => -1,
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxState {
    pub base: StatePoint,
    pub parity: Parity,
}

impl AuxState {
    pub fn new(base: StatePoint, parity: Parity) -> Self {
        Self { base, parity }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AuxModel<'a> {
    base: &'a PdmdpModel,
    lambda: f64,
}

/// Wrap `model` with inspection rate `lambda`.
pub fn build_auxiliary(model: &PdmdpModel, lambda: f64) -> Result<AuxModel<'_>, UniformizerError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(UniformizerError::BadLambda(lambda));
    }
    Ok(AuxModel { base: model, lambda })
}

impl<'a> AuxModel<'a> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn base_model(&self) -> &'a PdmdpModel {
        self.base
    }

    pub fn intensity(&self, x: &AuxState, action: usize) -> f64 {
        self.base.intensity(&x.base, action) + self.lambda
    }

    pub fn cost(&self, x: &AuxState, action: usize) -> f64 {
        self.base.cost(&x.base, action)
    }
}

impl JumpModel for AuxModel<'_> {
    type State = AuxState;

    fn base(&self) -> &PdmdpModel {
        self.base
    }

    fn point(&self, x: &AuxState) -> StatePoint {
        x.base
    }

    fn advance(&self, x: &AuxState, t: f64) -> AuxState {
        AuxState {
            base: self.base.flow_advance(&x.base, t),
            parity: x.parity,
        }
    }

    fn rates(&self, x: &AuxState, mu: &ActionDistribution) -> (f64, f64) {
        let (q, c) = self.base.rates(&x.base, mu);
        (q + self.lambda, c)
    }

    fn jumps(&self, cell: &AuxState, at: &AuxState, mu: &ActionDistribution) -> Vec<Jump<AuxState>> {
        let mut out: Vec<Jump<AuxState>> = self
            .base
            .jumps(&cell.base, &at.base, mu)
            .into_iter()
            .map(|j| Jump {
                to: AuxState::new(j.to, at.parity),
                weight: j.weight,
                fictitious: false,
            })
            .collect();
        out.push(Jump {
            to: AuxState::new(at.base, at.parity.flip()),
            weight: self.lambda,
            fictitious: true,
        });
        out
    }
}

/// The auxiliary policy built from a policy of the original model: at an
/// auxiliary history it rebuilds the thinned history and delegates with the
/// elapsed time measured from the last honest jump.
#[derive(Clone, Debug)]
pub struct LiftedPolicy<P> {
    inner: P,
}

pub fn lift_policy<P>(policy: P) -> LiftedPolicy<P> {
    LiftedPolicy { inner: policy }
}

impl<P> LiftedPolicy<P> {
    pub fn inner(&self) -> &P {
        &self.inner
    }
}

/// Thin an auxiliary history by parity flips. Returns the honest history and
/// the time elapsed since its last mark.
pub fn thin_history(h: &History<AuxState>) -> (History<StatePoint>, f64) {
    let mut thinned = History::new(h.initial_state().base);
    let mut since = 0.0;
    let mut parity = h.initial_state().parity;
    for e in &h.entries()[1..] {
        since += e.sojourn;
        if e.state.parity == parity {
            thinned.push(e.state.base, since, false);
            since = 0.0;
        }
        parity = e.state.parity;
    }
    (thinned, since)
}

impl<P: ControlPolicy<StatePoint>> ControlPolicy<AuxState> for LiftedPolicy<P> {
    fn control(&self, history: &History<AuxState>) -> RelaxedControl {
        let (thinned, offset) = thin_history(history);
        self.inner.control(&thinned).shift(offset)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThinnedProcess {
    pub parity: Parity,
    /// `(tau_(m), x_(m))`, starting at `(0, x_0)`.
    pub marks: Vec<(f64, StatePoint)>,
    /// Fictitious jumps in `(tau_(m), tau_(m+1))`; the last entry counts
    /// those after the final honest mark.
    pub fictitious: Vec<usize>,
    pub terminated_by: Termination,
}

impl ThinnedProcess {
    pub fn honest_jumps(&self) -> usize {
        self.marks.len() - 1
    }

    /// `tau_(m) - tau_(m-1)` for `m >= 1`.
    pub fn sojourns(&self) -> Vec<f64> {
        self.marks.windows(2).map(|w| w[1].0 - w[0].0).collect()
    }
}

/// Label every auxiliary jump, cross-checking the sampler's channel against
/// both characterizations (parity flip; mark equal to the flowed point),
/// and keep the honest marks.
pub fn classify_and_thin(aux: &AuxModel<'_>, traj: &Trajectory<AuxState>) -> Result<ThinnedProcess, UniformizerError> {
    let entries = traj.history.entries();
    let initial = entries[0].state.parity;
    let mut marks = vec![(0.0, entries[0].state.base)];
    let mut fictitious = vec![0usize];
    let mut t = 0.0;
    for l in 1..entries.len() {
        let prev = &entries[l - 1].state;
        let cur = &entries[l];
        t += cur.sojourn;
        let parity_flip = cur.state.parity != prev.parity;
        let on_flow = cur.state.base == aux.advance(prev, cur.sojourn).base;
        if parity_flip != on_flow || cur.fictitious != parity_flip {
            return Err(UniformizerError::LabelMismatch {
                jump: l,
                sampler: cur.fictitious,
                parity_flip,
                on_flow,
            });
        }
        if parity_flip {
            *fictitious.last_mut().expect("nonempty") += 1;
        } else {
            marks.push((t, cur.state.base));
            fictitious.push(0);
        }
    }
    Ok(ThinnedProcess {
        parity: initial,
        marks,
        fictitious,
        terminated_by: traj.terminated_by,
    })
}

/// Probability of exactly `n` fictitious jumps before the first honest jump,
/// with that jump in `[0, horizon]`, for constant base rate `q`.
pub fn fictitious_count_law(q: f64, lambda: f64, n: usize, horizon: f64) -> f64 {
    assert!(q >= 0.0 && lambda > 0.0 && horizon > 0.0);
    if q == 0.0 {
        return 0.0;
    }
    let k = n as f64;
    // q lambda^n / (lambda+q)^{n+1}, in log space for large n
    let weight = (q.ln() + k * lambda.ln() - (k + 1.0) * (lambda + q).ln()).exp();
    if horizon.is_infinite() {
        weight
    } else {
        weight * gamma_lr(k + 1.0, (lambda + q) * horizon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelIdentity {
    /// `int f d(q-tilde-breve)` obtained from the signed auxiliary kernel.
    pub lhs: f64,
    /// `int f(y, i) q-tilde(dy|x,a) + lambda f(x, -i)`.
    pub rhs: f64,
}

/// Both sides of the post-jump measure identity for `f` at `((x, i), a)`.
pub fn aux_kernel_identity_check(
    aux: &AuxModel<'_>,
    f: impl Fn(&AuxState) -> f64,
    x: StatePoint,
    i: Parity,
    action: usize,
) -> KernelIdentity {
    let base = aux.base;
    let cell = base.cell_of(&x);
    let here = AuxState::new(x, i);
    let there = AuxState::new(x, i.flip());
    let lambda = aux.lambda;

    // Signed kernel: table rows (diagonal included) in parity i, then the
    // inspection channel +lambda at (x,-i), -lambda at (x,i). Adding back
    // q-breve_x(a) f(x,i) turns it into the post-jump measure.
    let rows = base.kernel().entries(x.mode, cell, action);
    let mut signed: f64 = rows
        .iter()
        .map(|e| e.rate * f(&AuxState::new(StatePoint::new(e.to_mode, e.post_jump.land(x.position)), i)))
        .sum();
    signed += base.kernel().diagonal(x.mode, cell, action) * f(&here);
    signed += lambda * f(&there) - lambda * f(&here);
    let lhs = signed + aux.intensity(&here, action) * f(&here);

    let mu = ActionDistribution::dirac(base.action_count(), action);
    let honest: f64 = base
        .mix_kernel(&x, &mu)
        .post_jump
        .iter()
        .map(|(y, w)| w * f(&AuxState::new(*y, i)))
        .sum();
    KernelIdentity {
        lhs,
        rhs: honest + lambda * f(&there),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquivalenceConfig {
    pub lambda: f64,
    pub n_paths: usize,
    /// Jump depth `K`.
    pub depth: usize,
    pub seed: u64,
    /// Common observation window for both processes.
    pub horizon: f64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            n_paths: 100_000,
            depth: 3,
            seed: 42,
            horizon: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    /// Two-sample sup-CDF distance of the `m`-th sojourn.
    SojournKs,
    /// Chi-square homogeneity of the `m`-th mark over (mode x cell) bins.
    MarkChiSquare,
    /// Chi-square fit of fictitious counts before the first honest jump.
    FictitiousCount,
    /// `|mean_orig - mean_aux|` of the risk cost against 3 combined SE.
    RiskCostDiff,
    /// Auxiliary trajectories whose labels failed the cross-check.
    LabelMismatch,
}

impl Statistic {
    pub fn as_str(&self) -> &'static str {
        match self {
            Statistic::SojournKs => "sojourn_ks",
            Statistic::MarkChiSquare => "mark_chi2",
            Statistic::FictitiousCount => "fictitious_count_chi2",
            Statistic::RiskCostDiff => "risk_cost_diff",
            Statistic::LabelMismatch => "label_mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceRow {
    pub jump_index: usize,
    pub statistic: Statistic,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub original_risk: RiskEstimate,
    pub auxiliary_risk: RiskEstimate,
}

impl EquivalenceReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn rows_for(&self, statistic: Statistic) -> impl Iterator<Item = &EquivalenceRow> {
        self.rows.iter().filter(move |r| r.statistic == statistic)
    }
}

fn mark_bin(model: &PdmdpModel, x: Option<&StatePoint>) -> usize {
    let grid = model.grid();
    let n_bins: usize = (0..model.mode_count()).map(|m| grid.cell_count(m)).sum();
    match x {
        None => n_bins,
        Some(x) => (0..x.mode).map(|m| grid.cell_count(m)).sum::<usize>() + model.cell_of(x),
    }
}

/// The base intensity along the initial sojourn, if it is one constant.
fn constant_initial_intensity<P: ControlPolicy<StatePoint> + ?Sized>(model: &PdmdpModel, policy: &P, x0: &StatePoint) -> Option<f64> {
    let control = policy.control(&History::new(*x0));
    let profile = Profile::build(model, x0, &control, &[]);
    let q = profile.segments()[0].intensity;
    profile.segments().iter().all(|s| s.intensity == q).then_some(q)
}

/// Simulate the original process and the thinned auxiliary process under the
/// lifted policy, and compare them depth by depth.
pub fn equivalence_test<P>(
    model: &PdmdpModel,
    policy: &P,
    x0: StatePoint,
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport, UniformizerError>
where
    P: ControlPolicy<StatePoint>,
{
    let aux = build_auxiliary(model, cfg.lambda)?;
    let limits = Limits::new(cfg.depth, cfg.horizon);
    let orig = simulate_paths(
        model,
        policy,
        &x0,
        &MonteCarlo {
            n_paths: cfg.n_paths,
            seed: cfg.seed,
            limits,
        },
    );
    let lifted = lift_policy(policy);
    let aux_paths = simulate_paths(
        &aux,
        &lifted,
        &AuxState::new(x0, Parity::Plus),
        &MonteCarlo {
            n_paths: cfg.n_paths,
            seed: sibling_seed(cfg.seed, 1),
            limits,
        },
    );

    let mut mismatches = 0usize;
    let thinned: Vec<ThinnedProcess> = aux_paths
        .iter()
        .filter_map(|t| match classify_and_thin(&aux, t) {
            Ok(p) => Some(p),
            Err(_) => {
                mismatches += 1;
                None
            }
        })
        .collect();

    let mut rows = Vec::new();
    let alpha = 1.0 - CONFIDENCE;
    let n_bins = mark_bin(model, None) + 1;
    for m in 1..=cfg.depth {
        let a: Vec<f64> = orig
            .iter()
            .map(|t| t.history.entries().get(m).map_or(f64::INFINITY, |e| e.sojourn))
            .collect();
        let b: Vec<f64> = thinned
            .iter()
            .map(|p| p.marks.get(m).map_or(f64::INFINITY, |w| w.0 - p.marks[m - 1].0))
            .collect();
        let d = ks_distance(&a, &b);
        let thr = dkw_two_sample_threshold(a.len(), b.len(), alpha);
        rows.push(EquivalenceRow {
            jump_index: m,
            statistic: Statistic::SojournKs,
            value: d,
            threshold: thr,
            pass: d < thr,
        });

        let mut ca = vec![0u64; n_bins];
        let mut cb = vec![0u64; n_bins];
        for t in &orig {
            ca[mark_bin(model, t.history.entries().get(m).map(|e| &e.state))] += 1;
        }
        for p in &thinned {
            cb[mark_bin(model, p.marks.get(m).map(|w| &w.1))] += 1;
        }
        let chi = chi_square_homogeneity(&ca, &cb);
        rows.push(EquivalenceRow {
            jump_index: m,
            statistic: Statistic::MarkChiSquare,
            value: chi.statistic,
            threshold: chi.threshold,
            pass: chi.passes(),
        });
    }

    if let Some(q) = constant_initial_intensity(model, policy, &x0).filter(|q| *q > 0.0) {
        let row = fictitious_count_row(&thinned, q, cfg.lambda, cfg.horizon);
        rows.push(row);
    }

    let original_risk = risk_from_exponents(&orig.iter().map(|t| t.cost_integral).collect::<Vec<_>>());
    let auxiliary_risk = risk_from_exponents(&aux_paths.iter().map(|t| t.cost_integral).collect::<Vec<_>>());
    rows.push(risk_row(&original_risk, &auxiliary_risk));

    rows.push(EquivalenceRow {
        jump_index: 0,
        statistic: Statistic::LabelMismatch,
        value: mismatches as f64,
        threshold: 0.0,
        pass: mismatches == 0,
    });

    Ok(EquivalenceReport {
        rows,
        original_risk,
        auxiliary_risk,
    })
}

/// Largest count given its own bin; larger counts share a tail bin.
pub const FICTITIOUS_COUNT_BINS: usize = 6;

/// Observed fictitious counts before the first honest jump against the
/// closed-form law, with tail and censoring bins.
pub fn fictitious_count_row(thinned: &[ThinnedProcess], q: f64, lambda: f64, horizon: f64) -> EquivalenceRow {
    let k = FICTITIOUS_COUNT_BINS;
    let mut observed = vec![0u64; k + 3];
    for p in thinned {
        if p.honest_jumps() == 0 {
            observed[k + 2] += 1;
        } else {
            observed[p.fictitious[0].min(k + 1)] += 1;
        }
    }
    let mut probs: Vec<f64> = (0..=k).map(|n| fictitious_count_law(q, lambda, n, horizon)).collect();
    let censored = if horizon.is_infinite() { 0.0 } else { (-q * horizon).exp() };
    let listed: f64 = probs.iter().sum();
    probs.push((1.0 - censored - listed).max(0.0));
    probs.push(censored);
    let chi = chi_square_goodness_of_fit(&observed, &probs);
    EquivalenceRow {
        jump_index: 1,
        statistic: Statistic::FictitiousCount,
        value: chi.statistic,
        threshold: chi.threshold,
        pass: chi.passes(),
    }
}

fn risk_row(a: &RiskEstimate, b: &RiskEstimate) -> EquivalenceRow {
    let (value, threshold, pass) = match (a, b) {
        (
            RiskEstimate::Finite {
                mean: m1,
                standard_error: s1,
                ..
            },
            RiskEstimate::Finite {
                mean: m2,
                standard_error: s2,
                ..
            },
        ) => {
            let d = (m1 - m2).abs();
            let thr = 3.0 * (s1 * s1 + s2 * s2).sqrt();
            (d, thr, d <= thr)
        }
        (RiskEstimate::Infinite(_), RiskEstimate::Infinite(_)) => (0.0, 0.0, true),
        _ => (f64::INFINITY, 0.0, false),
    };
    EquivalenceRow {
        jump_index: 0,
        statistic: Statistic::RiskCostDiff,
        value,
        threshold,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PostJump;

    fn line() -> PdmdpModel {
        PdmdpModel::builder(["s1", "s2"], ["a"])
            .rate("s1", 0, "a", "s2", 2.0, PostJump::Keep)
            .cost("s1", 0, "a", 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn aux_rates() {
        let m = line();
        let aux = build_auxiliary(&m, 3.0).unwrap();
        let x = AuxState::new(StatePoint::new(0, 0.0), Parity::Minus);
        assert_eq!(aux.intensity(&x, 0), 5.0);
        assert_eq!(aux.cost(&x, 0), 1.0);
        assert_eq!(aux.cost(&AuxState::new(x.base, Parity::Plus), 0), 1.0);
        assert!(build_auxiliary(&m, 0.0).is_err());
        assert!(build_auxiliary(&m, -1.0).is_err());
    }

    #[test]
    fn zero_kernel_aux_has_only_fictitious_jumps() {
        let m = PdmdpModel::builder(["s"], ["a"]).build().unwrap();
        let aux = build_auxiliary(&m, 1.0).unwrap();
        let x = AuxState::new(StatePoint::new(0, 0.25), Parity::Plus);
        let mu = ActionDistribution::dirac(1, 0);
        assert_eq!(aux.rates(&x, &mu), (1.0, 0.0));
        let js = aux.jumps(&x, &x, &mu);
        assert_eq!(js.len(), 1);
        assert!(js[0].fictitious);
        assert_eq!(js[0].to, AuxState::new(x.base, Parity::Minus));
    }

    #[test]
    fn thin_history_by_parity() {
        let p = |m, pos, par| AuxState::new(StatePoint::new(m, pos), par);
        let mut h = History::new(p(0, 0.0, Parity::Plus));
        h.push(p(0, 0.0, Parity::Minus), 0.6, true);
        h.push(p(1, 0.0, Parity::Minus), 0.5, false);
        h.push(p(1, 0.0, Parity::Plus), 0.25, true);
        let (t, offset) = thin_history(&h);
        assert_eq!(t.jumps(), 1);
        assert_eq!(t.entries()[1].sojourn, 1.1);
        assert_eq!(t.last_state(), &StatePoint::new(1, 0.0));
        assert_eq!(offset, 0.25);
    }

    #[test]
    fn count_law_closed_forms() {
        for n in 0..8 {
            let p = fictitious_count_law(1.5, 1.5, n, f64::INFINITY);
            assert!((p - 0.5f64.powi(n as i32 + 1)).abs() < 1e-15);
        }
        assert!((fictitious_count_law(2.0, 3.0, 0, f64::INFINITY) - 0.4).abs() < 1e-15);
        assert_eq!(fictitious_count_law(0.0, 1.0, 3, 2.0), 0.0);
    }
}
