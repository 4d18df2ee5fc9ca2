//! Model primitives: finite modes times a real position, linear drift,
//! piecewise-constant rates and costs over a per-mode cell grid.
//!
//! A grid for mode `m` is a strictly increasing list of breakpoints
//! `b_0 < ... < b_{k-1}`, giving `k + 1` cells `(-inf, b_0), [b_0, b_1), ...,
//! [b_{k-1}, +inf)`. The outer cells are unbounded, so positions never leave
//! the grid; they simply stay in the first or last cell.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

/// Tolerance used for probability normalisation and kernel identities.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("action set must be nonempty")]
    EmptyActions,
    #[error("duplicate action label `{0}`")]
    DuplicateAction(String),
    #[error("mode set must be nonempty")]
    EmptyModes,
    #[error("duplicate mode label `{0}`")]
    DuplicateMode(String),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("grid of mode `{mode}` is not strictly increasing and finite")]
    BadGrid { mode: String },
    #[error("cell index {cell} out of range for mode `{mode}` ({cells} cells)")]
    CellOutOfRange { mode: String, cell: usize, cells: usize },
    #[error("drift of mode `{0}` is not finite")]
    BadDrift(String),
    #[error("action distribution has {got} weights, expected {expected}")]
    DistributionLength { expected: usize, got: usize },
    #[error("action distribution weight {0} is negative or not finite")]
    NegativeWeight(f64),
    #[error("action distribution sums to {0}, not 1")]
    NotNormalised(f64),
    #[error("action values must be finite, one per action")]
    BadActionValues,
}

/// A point of the state space: a mode and a finite position on its line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatePoint {
    pub mode: usize,
    pub position: f64,
}

impl StatePoint {
    pub fn new(mode: usize, position: f64) -> Self {
        Self { mode, position }
    }
}

impl fmt::Display for StatePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.mode, self.position)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    labels: Vec<String>,
}

impl ActionSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self, ModelError> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(ModelError::EmptyActions);
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(ModelError::DuplicateAction(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, a: usize) -> &str {
        &self.labels[a]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }
}

/// A probability vector over the (finite) action set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    weights: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::EmptyActions);
        }
        for &w in &weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(ModelError::NegativeWeight(w));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(ModelError::NotNormalised(total));
        }
        Ok(Self { weights })
    }

    pub fn dirac(n_actions: usize, action: usize) -> Self {
        let mut weights = vec![0.0; n_actions];
        weights[action] = 1.0;
        Self { weights }
    }

    pub fn uniform(n_actions: usize) -> Self {
        Self {
            weights: vec![1.0 / n_actions as f64; n_actions],
        }
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, alpha: f64, other: &Self) -> Self {
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, action: usize) -> f64 {
        self.weights[action]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Actions with positive weight.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0)
    }

    /// The action carrying all the mass, if the distribution is a Dirac.
    pub fn as_dirac(&self) -> Option<usize> {
        let mut it = self.support();
        match (it.next(), it.next()) {
            (Some((a, 1.0)), None) => Some(a),
            _ => None,
        }
    }
}

/// Linear drift per mode: `advance((m, p), t) = (m, p + v(m) t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    drift: Vec<f64>,
}

impl Flow {
    pub fn new(drift: Vec<f64>) -> Self {
        Self { drift }
    }

    pub fn drift(&self, mode: usize) -> f64 {
        self.drift[mode]
    }

    pub fn drifts(&self) -> &[f64] {
        &self.drift
    }

    pub fn advance(&self, x: &StatePoint, t: f64) -> StatePoint {
        debug_assert!(t >= 0.0);
        if t == 0.0 {
            return *x;
        }
        StatePoint {
            mode: x.mode,
            position: x.position + self.drift[x.mode] * t,
        }
    }

    /// Times in `(0, inf)` at which the flow from `x` passes through one of
    /// `breakpoints`, in increasing order.
    pub fn crossing_times(&self, x: &StatePoint, breakpoints: &[f64]) -> Vec<f64> {
        let v = self.drift[x.mode];
        let p = x.position;
        let mut times: Vec<f64> = if v > 0.0 {
            breakpoints
                .iter()
                .filter(|&&b| b > p)
                .map(|&b| (b - p) / v)
                .collect()
        } else if v < 0.0 {
            breakpoints
                .iter()
                .filter(|&&b| b < p)
                .map(|&b| (p - b) / -v)
                .collect()
        } else {
            Vec::new()
        };
        times.retain(|t| *t > 0.0 && t.is_finite());
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

/// Per-mode breakpoints defining the cells on which tables are constant.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    breakpoints: Vec<Vec<f64>>,
}

impl CellGrid {
    /// Fails with the offending mode index if a breakpoint list is not
    /// strictly increasing and finite.
    pub fn new(breakpoints: Vec<Vec<f64>>) -> Result<Self, usize> {
        for (m, bps) in breakpoints.iter().enumerate() {
            let ok = bps.iter().all(|b| b.is_finite()) && bps.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(m);
            }
        }
        Ok(Self { breakpoints })
    }

    pub fn modes(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn breakpoints(&self, mode: usize) -> &[f64] {
        &self.breakpoints[mode]
    }

    pub fn cell_count(&self, mode: usize) -> usize {
        self.breakpoints[mode].len() + 1
    }

    pub fn cell_of(&self, mode: usize, position: f64) -> usize {
        self.breakpoints[mode].partition_point(|&b| b <= position)
    }

    /// Every breakpoint of every mode, sorted and deduplicated.
    pub fn all_breakpoints(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.breakpoints.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }
}

/// Where a jump lands on the target mode's line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PostJump {
    Keep,
    Reset,
    Set(f64),
}

impl PostJump {
    pub fn land(&self, position: f64) -> f64 {
        match *self {
            PostJump::Keep => position,
            PostJump::Reset => 0.0,
            PostJump::Set(k) => k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateEntry {
    pub to_mode: usize,
    pub rate: f64,
    pub post_jump: PostJump,
}

/// A diagonal value supplied explicitly by a model file; it must equal minus
/// the off-diagonal row sum.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalEntry {
    pub mode: usize,
    pub cell: usize,
    pub action: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateKernel {
    grid: CellGrid,
    // [mode][cell][action] -> entries
    table: Vec<Vec<Vec<Vec<RateEntry>>>>,
    declared_diagonal: Vec<DiagonalEntry>,
}

impl RateKernel {
    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn entries(&self, mode: usize, cell: usize, action: usize) -> &[RateEntry] {
        &self.table[mode][cell][action]
    }

    pub fn declared_diagonal(&self) -> &[DiagonalEntry] {
        &self.declared_diagonal
    }

    /// Positions where a same-mode `reset`/`set` jump from `mode` lands.
    /// At those points the jump is a self-loop, so profiles cut there.
    pub fn self_landing_points(&self, mode: usize) -> Vec<f64> {
        let mut pts: Vec<f64> = self.table[mode]
            .iter()
            .flatten()
            .flatten()
            .filter(|e| e.to_mode == mode)
            .filter_map(|e| match e.post_jump {
                PostJump::Keep => None,
                PostJump::Reset => Some(0.0),
                PostJump::Set(y) => Some(y),
            })
            .collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Diagonal entry implied by the table: minus the off-diagonal row sum.
    pub fn diagonal(&self, mode: usize, cell: usize, action: usize) -> f64 {
        -self.entries(mode, cell, action).iter().map(|e| e.rate).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostRate {
    // [mode][cell][action]
    table: Vec<Vec<Vec<f64>>>,
}

impl CostRate {
    pub fn get(&self, mode: usize, cell: usize, action: usize) -> f64 {
        self.table[mode][cell][action]
    }
}

/// Result of mixing the kernel and cost under an action distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedKernel {
    pub intensity: f64,
    /// Post-jump measure as (landing point, mass); total mass is `intensity`.
    pub post_jump: Vec<(StatePoint, f64)>,
    pub cost: f64,
}

/// One atom of a post-jump measure, tagged with the channel that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Jump<S> {
    pub to: S,
    pub weight: f64,
    pub fictitious: bool,
}

/// Anything the simulator, kernel evaluator and solver can run on: a flow in
/// the base state space plus mixed intensity, cost and post-jump measure.
pub trait JumpModel: Sync {
    type State: Clone + fmt::Debug + PartialEq + Send + Sync;

    fn base(&self) -> &PdmdpModel;
    fn point(&self, x: &Self::State) -> StatePoint;
    fn advance(&self, x: &Self::State, t: f64) -> Self::State;
    /// Mixed (intensity, cost rate) at `x` under `mu`.
    fn rates(&self, x: &Self::State, mu: &ActionDistribution) -> (f64, f64);
    /// Post-jump atoms for a jump at `at`, with rates taken from the cell of
    /// `cell`. The two coincide except on cell boundaries.
    fn jumps(&self, cell: &Self::State, at: &Self::State, mu: &ActionDistribution)
        -> Vec<Jump<Self::State>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PdmdpModel {
    modes: Vec<String>,
    actions: ActionSet,
    flow: Flow,
    kernel: RateKernel,
    cost: CostRate,
    action_values: Option<Vec<f64>>,
}

impl PdmdpModel {
    pub fn builder<S: Into<String>>(
        modes: impl IntoIterator<Item = S>,
        actions: impl IntoIterator<Item = S>,
    ) -> ModelBuilder {
        ModelBuilder::new(
            modes.into_iter().map(Into::into).collect(),
            actions.into_iter().map(Into::into).collect(),
        )
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_index(&self, name: &str) -> Option<usize> {
        self.modes.iter().position(|m| m == name)
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn action_count(&self) -> usize {
        self.actions.len()
    }

    pub fn flow(&self) -> &Flow {
        &self.flow
    }

    pub fn kernel(&self) -> &RateKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &CellGrid {
        &self.kernel.grid
    }

    pub fn cost_rate(&self) -> &CostRate {
        &self.cost
    }

    /// Optional embedding of the actions into the real line, used by the
    /// relaxed-control test functions.
    pub fn action_values(&self) -> Option<&[f64]> {
        self.action_values.as_deref()
    }

    pub fn cell_of(&self, x: &StatePoint) -> usize {
        self.grid().cell_of(x.mode, x.position)
    }

    pub fn flow_advance(&self, x: &StatePoint, t: f64) -> StatePoint {
        self.flow.advance(x, t)
    }

    /// `q_x(a)`: total rate of genuine jumps (landing away from `x`).
    pub fn intensity(&self, x: &StatePoint, action: usize) -> f64 {
        self.intensity_in(self.cell_of(x), x, action)
    }

    pub fn cost(&self, x: &StatePoint, action: usize) -> f64 {
        self.cost.get(x.mode, self.cell_of(x), action)
    }

    /// `sup_a q_x(a)`.
    pub fn max_intensity(&self, x: &StatePoint) -> f64 {
        (0..self.action_count())
            .map(|a| self.intensity(x, a))
            .fold(0.0, f64::max)
    }

    fn intensity_in(&self, cell: usize, at: &StatePoint, action: usize) -> f64 {
        self.kernel
            .entries(at.mode, cell, action)
            .iter()
            .filter(|e| !lands_on(at, e))
            .map(|e| e.rate)
            .sum()
    }

    /// Post-jump atoms of action `a` at `at` with rates from `cell`.
    fn row(&self, cell: usize, at: &StatePoint, action: usize) -> impl Iterator<Item = (StatePoint, f64)> + '_ {
        let at = *at;
        self.kernel
            .entries(at.mode, cell, action)
            .iter()
            .filter(move |e| !lands_on(&at, e))
            .map(move |e| {
                (
                    StatePoint::new(e.to_mode, e.post_jump.land(at.position)),
                    e.rate,
                )
            })
    }

    /// Mix intensity, post-jump measure and cost under `mu` at `x`.
    pub fn mix_kernel(&self, x: &StatePoint, mu: &ActionDistribution) -> MixedKernel {
        self.mix_kernel_in(self.cell_of(x), x, mu)
    }

    fn mix_kernel_in(&self, cell: usize, x: &StatePoint, mu: &ActionDistribution) -> MixedKernel {
        let mut intensity = 0.0;
        let mut cost = 0.0;
        let mut post_jump = Vec::new();
        for (a, w) in mu.support() {
            intensity += w * self.intensity_in(cell, x, a);
            cost += w * self.cost.get(x.mode, cell, a);
            for (y, r) in self.row(cell, x, a) {
                if r > 0.0 {
                    post_jump.push((y, w * r));
                }
            }
        }
        MixedKernel {
            intensity,
            post_jump,
            cost,
        }
    }
}

// A jump landing exactly on its source point is not a jump: the kernel only
// carries mass off the diagonal.
fn lands_on(at: &StatePoint, e: &RateEntry) -> bool {
    e.to_mode == at.mode && e.post_jump.land(at.position) == at.position
}

impl JumpModel for PdmdpModel {
    type State = StatePoint;

    fn base(&self) -> &PdmdpModel {
        self
    }

    fn point(&self, x: &StatePoint) -> StatePoint {
        *x
    }

    fn advance(&self, x: &StatePoint, t: f64) -> StatePoint {
        self.flow.advance(x, t)
    }

    fn rates(&self, x: &StatePoint, mu: &ActionDistribution) -> (f64, f64) {
        let cell = self.cell_of(x);
        let mut q = 0.0;
        let mut c = 0.0;
        for (a, w) in mu.support() {
            q += w * self.intensity_in(cell, x, a);
            c += w * self.cost.get(x.mode, cell, a);
        }
        (q, c)
    }

    fn jumps(&self, cell: &StatePoint, at: &StatePoint, mu: &ActionDistribution) -> Vec<Jump<StatePoint>> {
        let cell = self.cell_of(cell);
        self.mix_kernel_in(cell, at, mu)
            .post_jump
            .into_iter()
            .map(|(to, weight)| Jump {
                to,
                weight,
                fictitious: false,
            })
            .collect()
    }
}

/// Where an invariant violation was found.
#[derive(Clone, Debug, PartialEq)]
pub struct Location {
    pub mode: String,
    pub cell: usize,
    pub action: String,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mode `{}`, cell {}, action `{}`", self.mode, self.cell, self.action)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NegativeRate { at: Location, to_mode: String, rate: f64 },
    NonFiniteRate { at: Location, to_mode: String },
    BadLanding { at: Location, to_mode: String },
    SelfJump { at: Location },
    DiagonalMismatch { at: Location, declared: f64, implied: f64 },
    NegativeCost { at: Location, cost: f64 },
    NonFiniteCost { at: Location },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeRate { at, to_mode, rate } => {
                write!(f, "{at}: negative rate {rate} to mode `{to_mode}`")
            }
            Violation::NonFiniteRate { at, to_mode } => {
                write!(f, "{at}: non-finite rate to mode `{to_mode}`")
            }
            Violation::BadLanding { at, to_mode } => {
                write!(f, "{at}: non-finite landing position in mode `{to_mode}`")
            }
            Violation::SelfJump { at } => {
                write!(f, "{at}: same-mode `keep` entry never moves the state")
            }
            Violation::DiagonalMismatch { at, declared, implied } => write!(
                f,
                "{at}: declared diagonal {declared} but rows require {implied} (q(S|x,a) must be 0)"
            ),
            Violation::NegativeCost { at, cost } => write!(f, "{at}: negative cost {cost}"),
            Violation::NonFiniteCost { at } => write!(f, "{at}: non-finite cost"),
        }
    }
}

/// Report every invariant violation of `model`; empty when valid.
pub fn validate_model(model: &PdmdpModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let loc = |m: usize, cell: usize, a: usize| Location {
        mode: model.modes[m].clone(),
        cell,
        action: model.actions.label(a).to_string(),
    };
    for m in 0..model.mode_count() {
        for cell in 0..model.grid().cell_count(m) {
            for a in 0..model.action_count() {
                for e in model.kernel.entries(m, cell, a) {
                    let to_mode = model.modes[e.to_mode].clone();
                    if !e.rate.is_finite() {
                        out.push(Violation::NonFiniteRate { at: loc(m, cell, a), to_mode });
                        continue;
                    }
                    if e.rate < 0.0 {
                        out.push(Violation::NegativeRate {
                            at: loc(m, cell, a),
                            to_mode: to_mode.clone(),
                            rate: e.rate,
                        });
                    }
                    if let PostJump::Set(k) = e.post_jump {
                        if !k.is_finite() {
                            out.push(Violation::BadLanding { at: loc(m, cell, a), to_mode: to_mode.clone() });
                        }
                    }
                    if e.to_mode == m && e.post_jump == PostJump::Keep && e.rate != 0.0 {
                        out.push(Violation::SelfJump { at: loc(m, cell, a) });
                    }
                }
                let c = model.cost.get(m, cell, a);
                if !c.is_finite() {
                    out.push(Violation::NonFiniteCost { at: loc(m, cell, a) });
                } else if c < 0.0 {
                    out.push(Violation::NegativeCost { at: loc(m, cell, a), cost: c });
                }
            }
        }
    }
    for d in &model.kernel.declared_diagonal {
        let implied = model.kernel.diagonal(d.mode, d.cell, d.action);
        if !(d.value - implied).abs().le(&(PROB_TOL * implied.abs().max(1.0))) {
            out.push(Violation::DiagonalMismatch {
                at: loc(d.mode, d.cell, d.action),
                declared: d.value,
                implied,
            });
        }
    }
    out
}

/// Name-based builder; structural problems are errors, value problems are
/// left for [`validate_model`].
#[derive(Clone, Debug)]
pub struct ModelBuilder {
    modes: Vec<String>,
    actions: Vec<String>,
    drift: Vec<(String, f64)>,
    grid: Vec<(String, Vec<f64>)>,
    rates: Vec<(String, usize, String, String, f64, PostJump)>,
    costs: Vec<(String, usize, String, f64)>,
    diagonal: Vec<(String, usize, String, f64)>,
    action_values: Option<Vec<f64>>,
}

impl ModelBuilder {
    fn new(modes: Vec<String>, actions: Vec<String>) -> Self {
        Self {
            modes,
            actions,
            drift: Vec::new(),
            grid: Vec::new(),
            rates: Vec::new(),
            costs: Vec::new(),
            diagonal: Vec::new(),
            action_values: None,
        }
    }

    pub fn drift(mut self, mode: &str, v: f64) -> Self {
        self.drift.push((mode.into(), v));
        self
    }

    pub fn grid(mut self, mode: &str, breakpoints: Vec<f64>) -> Self {
        self.grid.push((mode.into(), breakpoints));
        self
    }

    pub fn rate(mut self, from: &str, cell: usize, action: &str, to: &str, rate: f64, rule: PostJump) -> Self {
        self.rates.push((from.into(), cell, action.into(), to.into(), rate, rule));
        self
    }

    pub fn cost(mut self, mode: &str, cell: usize, action: &str, cost: f64) -> Self {
        self.costs.push((mode.into(), cell, action.into(), cost));
        self
    }

    pub fn diagonal(mut self, mode: &str, cell: usize, action: &str, value: f64) -> Self {
        self.diagonal.push((mode.into(), cell, action.into(), value));
        self
    }

    pub fn action_values(mut self, values: Vec<f64>) -> Self {
        self.action_values = Some(values);
        self
    }

    pub fn build(self) -> Result<PdmdpModel, ModelError> {
        if self.modes.is_empty() {
            return Err(ModelError::EmptyModes);
        }
        let mut seen = HashSet::new();
        for m in &self.modes {
            if !seen.insert(m.as_str()) {
                return Err(ModelError::DuplicateMode(m.clone()));
            }
        }
        let actions = ActionSet::new(self.actions.clone())?;
        let n_modes = self.modes.len();
        let n_actions = actions.len();
        let mode_idx = |name: &str| {
            self.modes
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| ModelError::UnknownMode(name.to_string()))
        };
        let action_idx = |name: &str| {
            actions
                .index_of(name)
                .ok_or_else(|| ModelError::UnknownAction(name.to_string()))
        };

        let mut drift = vec![0.0; n_modes];
        for (m, v) in &self.drift {
            if !v.is_finite() {
                return Err(ModelError::BadDrift(m.clone()));
            }
            drift[mode_idx(m)?] = *v;
        }
        let mut bps = vec![Vec::new(); n_modes];
        for (m, g) in &self.grid {
            bps[mode_idx(m)?] = g.clone();
        }
        let grid = CellGrid::new(bps).map_err(|m| ModelError::BadGrid {
            mode: self.modes[m].clone(),
        })?;

        let check_cell = |m: usize, cell: usize| {
            let cells = grid.cell_count(m);
            if cell < cells {
                Ok(())
            } else {
                Err(ModelError::CellOutOfRange {
                    mode: self.modes[m].clone(),
                    cell,
                    cells,
                })
            }
        };

        let mut table: Vec<Vec<Vec<Vec<RateEntry>>>> = (0..n_modes)
            .map(|m| vec![vec![Vec::new(); n_actions]; grid.cell_count(m)])
            .collect();
        for (from, cell, a, to, rate, rule) in &self.rates {
            let m = mode_idx(from)?;
            check_cell(m, *cell)?;
            table[m][*cell][action_idx(a)?].push(RateEntry {
                to_mode: mode_idx(to)?,
                rate: *rate,
                post_jump: *rule,
            });
        }
        let mut cost: Vec<Vec<Vec<f64>>> = (0..n_modes)
            .map(|m| vec![vec![0.0; n_actions]; grid.cell_count(m)])
            .collect();
        for (mode, cell, a, c) in &self.costs {
            let m = mode_idx(mode)?;
            check_cell(m, *cell)?;
            cost[m][*cell][action_idx(a)?] = *c;
        }
        let mut declared_diagonal = Vec::new();
        for (mode, cell, a, v) in &self.diagonal {
            let m = mode_idx(mode)?;
            check_cell(m, *cell)?;
            declared_diagonal.push(DiagonalEntry {
                mode: m,
                cell: *cell,
                action: action_idx(a)?,
                value: *v,
            });
        }
        if let Some(values) = &self.action_values {
            if values.len() != n_actions || values.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::BadActionValues);
            }
        }
        Ok(PdmdpModel {
            modes: self.modes,
            actions,
            flow: Flow::new(drift),
            kernel: RateKernel {
                grid,
                table,
                declared_diagonal,
            },
            cost: CostRate { table: cost },
            action_values: self.action_values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_action() -> PdmdpModel {
        PdmdpModel::builder(["s1", "s2"], ["a1", "a2"])
            .rate("s1", 0, "a1", "s2", 1.0, PostJump::Keep)
            .rate("s1", 0, "a2", "s2", 3.0, PostJump::Keep)
            .cost("s1", 0, "a1", 0.5)
            .cost("s1", 0, "a2", 1.5)
            .build()
            .unwrap()
    }

    #[test]
    fn negative_rate_is_one_violation() {
        let m = PdmdpModel::builder(["s1", "s2"], ["a"])
            .rate("s1", 0, "a", "s2", -1.0, PostJump::Keep)
            .build()
            .unwrap();
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::NegativeRate { at, to_mode, rate } => {
                assert_eq!(at.mode, "s1");
                assert_eq!(at.action, "a");
                assert_eq!(to_mode, "s2");
                assert_eq!(*rate, -1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_kernel_is_valid() {
        let m = PdmdpModel::builder(["s"], ["a"]).build().unwrap();
        assert!(validate_model(&m).is_empty());
        let mk = m.mix_kernel(&StatePoint::new(0, 0.3), &ActionDistribution::dirac(1, 0));
        assert_eq!(mk.intensity, 0.0);
        assert!(mk.post_jump.is_empty());
    }

    #[test]
    fn declared_diagonal_must_balance() {
        let m = PdmdpModel::builder(["s1", "s2"], ["a"])
            .rate("s1", 0, "a", "s2", 2.0, PostJump::Keep)
            .diagonal("s1", 0, "a", -1.5)
            .build()
            .unwrap();
        let v = validate_model(&m);
        assert!(matches!(v.as_slice(), [Violation::DiagonalMismatch { implied, .. }] if *implied == -2.0));

        let ok = PdmdpModel::builder(["s1", "s2"], ["a"])
            .rate("s1", 0, "a", "s2", 2.0, PostJump::Keep)
            .diagonal("s1", 0, "a", -2.0)
            .build()
            .unwrap();
        assert!(validate_model(&ok).is_empty());
    }

    #[test]
    fn same_mode_keep_is_flagged() {
        let m = PdmdpModel::builder(["s"], ["a"])
            .rate("s", 0, "a", "s", 1.0, PostJump::Keep)
            .build()
            .unwrap();
        assert!(matches!(validate_model(&m).as_slice(), [Violation::SelfJump { .. }]));
    }

    #[test]
    fn flow_examples() {
        let m = PdmdpModel::builder(["m"], ["a"]).drift("m", 2.0).build().unwrap();
        let x = StatePoint::new(0, 0.5);
        assert_eq!(m.flow_advance(&x, 0.0), x);
        assert_eq!(m.flow_advance(&x, 1.0), StatePoint::new(0, 2.5));
        assert_eq!(
            m.flow_advance(&m.flow_advance(&x, 1.3), 0.7),
            m.flow_advance(&x, 2.0)
        );
    }

    #[test]
    fn mixing_examples() {
        let m = two_action();
        let x = StatePoint::new(0, 0.0);
        let uni = ActionDistribution::uniform(2);
        let mk = m.mix_kernel(&x, &uni);
        assert_eq!(mk.intensity, 2.0);
        let total: f64 = mk.post_jump.iter().map(|(_, w)| w).sum();
        assert!((total - mk.intensity).abs() < PROB_TOL);
        assert_eq!(mk.cost, 1.0);

        let d = m.mix_kernel(&x, &ActionDistribution::dirac(2, 0));
        assert_eq!(d.intensity, 1.0);
        assert_eq!(d.post_jump, vec![(StatePoint::new(1, 0.0), 1.0)]);
        assert_eq!(d.cost, 0.5);
    }

    #[test]
    fn cells_are_left_closed_with_unbounded_ends() {
        let g = CellGrid::new(vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(g.cell_of(0, -5.0), 0);
        assert_eq!(g.cell_of(0, 1.0), 1);
        assert_eq!(g.cell_of(0, 1.5), 1);
        assert_eq!(g.cell_of(0, 2.0), 2);
        assert_eq!(g.cell_of(0, 1e9), 2);
        assert!(CellGrid::new(vec![vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn crossing_times_follow_drift_direction() {
        let f = Flow::new(vec![2.0, -1.0, 0.0]);
        assert_eq!(f.crossing_times(&StatePoint::new(0, 0.0), &[-1.0, 1.0, 3.0]), vec![0.5, 1.5]);
        assert_eq!(f.crossing_times(&StatePoint::new(1, 0.0), &[-1.0, 1.0, -3.0]), vec![1.0, 3.0]);
        assert!(f.crossing_times(&StatePoint::new(2, 0.0), &[1.0]).is_empty());
    }

    #[test]
    fn distribution_checks() {
        assert!(ActionDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(ActionDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(ActionDistribution::new(vec![-0.1, 1.1]).is_err());
        assert_eq!(ActionDistribution::dirac(3, 1).as_dirac(), Some(1));
        assert_eq!(ActionDistribution::uniform(2).as_dirac(), None);
    }

    #[test]
    fn structural_errors() {
        let e = PdmdpModel::builder(["s"], ["a"]).rate("s", 3, "a", "s", 1.0, PostJump::Reset).build();
        assert!(matches!(e, Err(ModelError::CellOutOfRange { cell: 3, .. })));
        let e = PdmdpModel::builder(["s"], ["a"]).cost("t", 0, "a", 1.0).build();
        assert_eq!(e.unwrap_err(), ModelError::UnknownMode("t".into()));
        let e = PdmdpModel::builder(["s"], ["a", "a"]).build();
        assert_eq!(e.unwrap_err(), ModelError::DuplicateAction("a".into()));
    }
}
