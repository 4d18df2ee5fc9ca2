//! Risk-sensitive total-cost value iteration.
//!
//! Values live on a node grid per mode and are extended piecewise constantly
//! from the nearest node on the left. One application of the operator
//! minimizes, over a finite set of piecewise-constant controls,
//!
//! ```text
//! int_0^inf exp(-int_0^tau (q - c)) (int V dq~) dtau + exp(-int q) exp(int c)
//! ```
//!
//! with the boundary product taken as 0 whenever `exp(-int q) = 0`. Each
//! integral is a finite sum over flow segments plus a closed-form tail.

use rayon::prelude::*;
use thiserror::Error;

use crate::control::RelaxedControl;
use crate::model::{ActionDistribution, CellGrid, JumpModel, PdmdpModel, StatePoint};
use crate::profile::Profile;
use crate::sim::{PolicyError, StationaryPolicy, EXPONENT_OVERFLOW};
use crate::uniformizer::{build_auxiliary, AuxModel, AuxState, Parity, UniformizerError};

/// Largest admissible parity gap in the auxiliary iteration.
pub const PARITY_GAP_LIMIT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("node grid of mode {0} must be nonempty, finite and strictly increasing")]
    BadNodes(usize),
    #[error("{count} candidate controls exceed the cap of {cap}; lower the depth")]
    TooManyControls { count: u128, cap: usize },
    #[error("iteration {iteration}: value at {state} decreased from {before} to {after}")]
    NonMonotone {
        iteration: usize,
        state: String,
        before: f64,
        after: f64,
    },
    #[error("iteration {iteration}: parity gap {gap} exceeds {limit}", limit = PARITY_GAP_LIMIT)]
    ParityGap { iteration: usize, gap: f64 },
    #[error("selector differs between parities at mode {mode}, node {node}")]
    ParityDependentSelector { mode: usize, node: usize },
    #[error("state {0} is outside the finite set of the value table")]
    OutsideFiniteSet(StatePoint),
    #[error(transparent)]
    Lambda(#[from] UniformizerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// An element of `[1, inf]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Finite(f64),
    Infinite,
}

impl Value {
    fn from_f64(v: f64) -> Self {
        if v.is_finite() && v <= EXPONENT_OVERFLOW.exp() {
            Value::Finite(v)
        } else {
            Value::Infinite
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Value::Finite(_))
    }

    /// `f64::INFINITY` for [`Value::Infinite`].
    pub fn as_f64(&self) -> f64 {
        match *self {
            Value::Finite(v) => v,
            Value::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Value::Finite(v) => Some(v),
            Value::Infinite => None,
        }
    }
}

/// Per-mode node positions. Node `k` of a mode stands for the positions in
/// `[p_k, p_{k+1})`; node 0 also covers everything below `p_1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeGrid {
    nodes: Vec<Vec<f64>>,
    offsets: Vec<usize>,
}

impl NodeGrid {
    pub fn new(nodes: Vec<Vec<f64>>) -> Result<Self, SolverError> {
        for (m, ns) in nodes.iter().enumerate() {
            let ok = !ns.is_empty() && ns.iter().all(|p| p.is_finite()) && ns.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(SolverError::BadNodes(m));
            }
        }
        let mut offsets = Vec::with_capacity(nodes.len());
        let mut acc = 0;
        for ns in &nodes {
            offsets.push(acc);
            acc += ns.len();
        }
        Ok(Self { nodes, offsets })
    }

    /// `{0}` and the model's breakpoints, per mode.
    pub fn for_model(model: &PdmdpModel) -> Self {
        let nodes = (0..model.mode_count())
            .map(|m| {
                let mut ns = vec![0.0];
                ns.extend_from_slice(model.grid().breakpoints(m));
                ns.sort_by(f64::total_cmp);
                ns.dedup();
                ns
            })
            .collect();
        Self::new(nodes).expect("breakpoints are finite and sorted")
    }

    pub fn modes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self, mode: usize) -> &[f64] {
        &self.nodes[mode]
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_of(&self, x: &StatePoint) -> usize {
        self.nodes[x.mode]
            .partition_point(|&p| p <= x.position)
            .saturating_sub(1)
    }

    fn flat(&self, mode: usize, node: usize) -> usize {
        self.offsets[mode] + node
    }

    /// Grid points of every mode, for cutting flow segments.
    pub fn all_positions(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.nodes.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        all
    }

    /// The cells of the piecewise-constant extension, as a [`CellGrid`].
    pub fn cells(&self) -> CellGrid {
        CellGrid::new(self.nodes.iter().map(|ns| ns[1..].to_vec()).collect()).expect("nodes are sorted")
    }

    /// Every `(mode, node, position)`.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize, StatePoint)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(m, ns)| ns.iter().enumerate().map(move |(k, &p)| (m, k, StatePoint::new(m, p))))
    }
}

/// Values over `NodeGrid x parities`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTable {
    grid: NodeGrid,
    parities: usize,
    values: Vec<Value>,
}

impl ValueTable {
    pub fn constant(grid: NodeGrid, parities: usize, v: f64) -> Self {
        let n = grid.len() * parities;
        Self {
            grid,
            parities,
            values: vec![Value::Finite(v); n],
        }
    }

    pub fn grid(&self) -> &NodeGrid {
        &self.grid
    }

    pub fn parities(&self) -> usize {
        self.parities
    }

    fn index(&self, mode: usize, node: usize, parity: usize) -> usize {
        self.grid.flat(mode, node) * self.parities + parity
    }

    pub fn get(&self, mode: usize, node: usize, parity: usize) -> Value {
        self.values[self.index(mode, node, parity)]
    }

    pub fn set(&mut self, mode: usize, node: usize, parity: usize, v: Value) {
        let i = self.index(mode, node, parity);
        self.values[i] = v;
    }

    /// Piecewise-constant extension to an arbitrary point.
    pub fn at(&self, x: &StatePoint, parity: usize) -> Value {
        self.get(x.mode, self.grid.node_of(x), parity)
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    /// Flags of the finite set `{V < inf}`, in table order.
    pub fn finite_flags(&self) -> Vec<bool> {
        self.values.iter().map(Value::is_finite).collect()
    }

    /// `(mode, node, position, value)` for parity 0.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64, Value)> + '_ {
        self.grid
            .points()
            .map(|(m, k, p)| (m, k, p.position, self.get(m, k, 0)))
    }

    /// Sup distance between finite entries, or `None` if the finite sets differ.
    pub fn finite_sup_distance(&self, other: &Self) -> Option<f64> {
        let mut d: f64 = 0.0;
        for (a, b) in self.values.iter().zip(&other.values) {
            match (a, b) {
                (Value::Finite(a), Value::Finite(b)) => d = d.max((a - b).abs()),
                (Value::Infinite, Value::Infinite) => {}
                _ => return None,
            }
        }
        Some(d)
    }
}

/// Models whose value function the solver can tabulate.
pub trait Tabulated: JumpModel {
    const PARITIES: usize;
    fn state_at(&self, point: StatePoint, parity: usize) -> Self::State;
    fn parity_of(&self, x: &Self::State) -> usize;
}

impl Tabulated for PdmdpModel {
    const PARITIES: usize = 1;

    fn state_at(&self, point: StatePoint, _parity: usize) -> StatePoint {
        point
    }

    fn parity_of(&self, _x: &StatePoint) -> usize {
        0
    }
}

impl Tabulated for AuxModel<'_> {
    const PARITIES: usize = 2;

    fn state_at(&self, point: StatePoint, parity: usize) -> AuxState {
        AuxState::new(point, if parity == 0 { Parity::Plus } else { Parity::Minus })
    }

    fn parity_of(&self, x: &AuxState) -> usize {
        match x.parity {
            Parity::Plus => 0,
            Parity::Minus => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Defaults to [`NodeGrid::for_model`].
    pub nodes: Option<NodeGrid>,
    /// Dyadic refinement depth `d`: controls are constant on `2^d` pieces of
    /// `[0, time_unit)` and on the tail.
    pub depth: usize,
    pub time_unit: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_controls: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nodes: None,
            depth: 2,
            time_unit: 1.0,
            tolerance: 1e-8,
            max_iterations: 10_000,
            max_controls: 1 << 16,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(SolverError::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if !(self.time_unit > 0.0 && self.time_unit.is_finite()) {
            return Err(SolverError::Config(format!("time unit must be positive, got {}", self.time_unit)));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::Config("max iterations must be positive".into()));
        }
        if self.depth > 16 {
            return Err(SolverError::Config(format!("depth {} is too large", self.depth)));
        }
        Ok(())
    }

    fn grid_for(&self, model: &PdmdpModel) -> Result<NodeGrid, SolverError> {
        let grid = self.nodes.clone().unwrap_or_else(|| NodeGrid::for_model(model));
        if grid.modes() != model.mode_count() {
            return Err(SolverError::Config(format!(
                "node grid has {} modes, model has {}",
                grid.modes(),
                model.mode_count()
            )));
        }
        Ok(grid)
    }
}

/// The candidate controls: every assignment of actions to the `2^d` dyadic
/// pieces of `[0, time_unit)` and the tail (duplicates after merging removed).
pub fn control_set(n_actions: usize, depth: usize, time_unit: f64, cap: usize) -> Result<Vec<RelaxedControl>, SolverError> {
    let pieces = (1usize << depth) + 1;
    let count = (n_actions as u128).checked_pow(pieces as u32).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(SolverError::TooManyControls { count, cap });
    }
    let bps: Vec<f64> = (1..(1usize << depth))
        .map(|k| time_unit * k as f64 / (1usize << depth) as f64)
        .chain(std::iter::once(time_unit))
        .collect();
    let mut out: Vec<RelaxedControl> = Vec::with_capacity(count as usize);
    let mut digits = vec![0usize; pieces];
    loop {
        let segs = digits[..pieces - 1]
            .iter()
            .map(|&a| ActionDistribution::dirac(n_actions, a))
            .collect();
        let tail = ActionDistribution::dirac(n_actions, digits[pieces - 1]);
        let c = RelaxedControl::new(bps.clone(), segs, tail).expect("dyadic breakpoints are increasing");
        if !out.contains(&c) {
            out.push(c);
        }
        // odometer, least significant digit first
        let mut i = 0;
        loop {
            if i == pieces {
                return Ok(out);
            }
            digits[i] += 1;
            if digits[i] < n_actions {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

#[derive(Clone, Debug)]
struct SegPlan {
    len: f64,
    q: f64,
    r: f64,
    cost: f64,
    jumps: Vec<(usize, f64)>,
}

#[derive(Clone, Debug)]
struct ControlPlan {
    segments: Vec<SegPlan>,
}

/// Segment structure of every (state, control) pair; values enter only
/// through the jump targets, so this is computed once.
struct Plan {
    grid: NodeGrid,
    parities: usize,
    states: Vec<Vec<ControlPlan>>,
    labels: Vec<String>,
}

fn build_plan<M: Tabulated>(model: &M, config: &SolverConfig) -> Result<Plan, SolverError> {
    config.validate()?;
    let base = model.base();
    let grid = config.grid_for(base)?;
    let controls = control_set(base.action_count(), config.depth, config.time_unit, config.max_controls)?;
    let mut extra = grid.all_positions();
    extra.extend(base.grid().all_breakpoints());
    extra.sort_by(f64::total_cmp);
    extra.dedup();

    let table = ValueTable::constant(grid.clone(), M::PARITIES, 1.0);
    let mut keys = Vec::new();
    let mut labels = Vec::new();
    for (m, k, p) in grid.points() {
        for parity in 0..M::PARITIES {
            keys.push((m, k, p, parity));
            labels.push(format!("{}@{}[{}]", base.modes()[m], p.position, parity));
        }
    }
    let states = keys
        .par_iter()
        .map(|&(_, _, p, parity)| {
            let x = model.state_at(p, parity);
            controls
                .iter()
                .map(|rho| {
                    let profile = Profile::build(model, &x, rho, &extra);
                    let segments = profile
                        .segments()
                        .iter()
                        .map(|s| {
                            let mu = &rho.pieces()[s.piece];
                            let jumps = model
                                .jumps(&s.state, &s.state, mu)
                                .into_iter()
                                .filter(|j| j.weight > 0.0)
                                .map(|j| {
                                    let y = model.point(&j.to);
                                    (table.index(y.mode, grid.node_of(&y), model.parity_of(&j.to)), j.weight)
                                })
                                .collect();
                            SegPlan {
                                len: s.len(),
                                q: s.intensity,
                                r: s.intensity - s.cost,
                                cost: s.cost,
                                jumps,
                            }
                        })
                        .collect();
                    ControlPlan { segments }
                })
                .collect()
        })
        .collect();
    Ok(Plan {
        grid,
        parities: M::PARITIES,
        states,
        labels,
    })
}

/// `int_0^len exp(-r u) du`.
fn damped_length(r: f64, len: f64) -> f64 {
    if r == 0.0 {
        len
    } else {
        -(-r * len).exp_m1() / r
    }
}

impl ControlPlan {
    fn evaluate(&self, values: &[Value]) -> f64 {
        let mut total = 0.0;
        let mut exponent: f64 = 0.0; // int_0^start (q - c)
        let last = self.segments.len() - 1;
        for (k, s) in self.segments.iter().enumerate() {
            let jump_value: f64 = s.jumps.iter().map(|&(i, w)| w * values[i].as_f64()).sum();
            if k == last {
                if jump_value > 0.0 {
                    if s.r > 0.0 {
                        total += jump_value * (-exponent).exp() / s.r;
                    } else {
                        return f64::INFINITY;
                    }
                }
                // boundary product: 0 when the tail intensity is positive
                if s.q == 0.0 {
                    if s.cost > 0.0 {
                        return f64::INFINITY;
                    }
                    total += (-exponent).exp();
                }
            } else {
                if jump_value > 0.0 {
                    total += jump_value * (-exponent).exp() * damped_length(s.r, s.len);
                }
                exponent += s.r * s.len;
            }
        }
        total
    }
}

impl Plan {
    fn apply(&self, v: &ValueTable) -> ValueTable {
        let values: Vec<Value> = self
            .states
            .par_iter()
            .map(|controls| {
                let best = controls
                    .iter()
                    .map(|c| c.evaluate(&v.values))
                    .fold(f64::INFINITY, f64::min);
                // The operator maps [1, inf] into itself; only rounding can
                // land below 1.
                Value::from_f64(best.max(1.0))
            })
            .collect();
        ValueTable {
            grid: self.grid.clone(),
            parities: self.parities,
            values,
        }
    }
}

/// One application of the operator to `v`.
pub fn bellman_t<M: Tabulated>(model: &M, v: &ValueTable, config: &SolverConfig) -> Result<ValueTable, SolverError> {
    let plan = build_plan(model, config)?;
    if v.grid != plan.grid || v.parities != plan.parities {
        return Err(SolverError::Config("value table does not match the node grid".into()));
    }
    Ok(plan.apply(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub values: ValueTable,
    /// Finite sup change per iteration (`inf` when the finite set changed).
    pub residual_trace: Vec<f64>,
    /// Max parity gap per iteration (all zeros without parities).
    pub parity_gaps: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn parity_gap(v: &ValueTable) -> f64 {
    if v.parities < 2 {
        return 0.0;
    }
    v.values
        .chunks(v.parities)
        .map(|c| match (c[0], c[1]) {
            (Value::Finite(a), Value::Finite(b)) => (a - b).abs(),
            (Value::Infinite, Value::Infinite) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Successive approximation from `V_0 = 1`, asserting monotone iterates.
pub fn value_iterate<M: Tabulated>(model: &M, config: &SolverConfig) -> Result<Solution, SolverError> {
    let plan = build_plan(model, config)?;
    let mut v = ValueTable::constant(plan.grid.clone(), plan.parities, 1.0);
    let mut residual_trace = Vec::new();
    let mut parity_gaps = Vec::new();
    let mut converged = false;
    for iteration in 1..=config.max_iterations {
        let next = plan.apply(&v);
        for (i, (a, b)) in v.values.iter().zip(&next.values).enumerate() {
            let (a, b) = (a.as_f64(), b.as_f64());
            if b < a - 1e-12 * a.max(1.0) {
                return Err(SolverError::NonMonotone {
                    iteration,
                    state: plan.labels[i].clone(),
                    before: a,
                    after: b,
                });
            }
        }
        let gap = parity_gap(&next);
        parity_gaps.push(gap);
        if gap > PARITY_GAP_LIMIT {
            return Err(SolverError::ParityGap { iteration, gap });
        }
        let change = v.finite_sup_distance(&next).unwrap_or(f64::INFINITY);
        residual_trace.push(change);
        v = next;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(Solution {
        iterations: residual_trace.len(),
        values: v,
        residual_trace,
        parity_gaps,
        converged,
    })
}

/// `int V dq~(x, a) - (q_x(a) - c(x, a)) V(x)` for every action.
fn oe_terms<M: Tabulated>(model: &M, v: &ValueTable, x: &M::State) -> Vec<f64> {
    let base = model.base();
    let parity = model.parity_of(x);
    let vx = v.at(&model.point(x), parity).as_f64();
    (0..base.action_count())
        .map(|a| {
            let mu = ActionDistribution::dirac(base.action_count(), a);
            let (q, c) = model.rates(x, &mu);
            let jumps: f64 = model
                .jumps(x, x, &mu)
                .iter()
                .map(|j| j.weight * v.at(&model.point(&j.to), model.parity_of(&j.to)).as_f64())
                .sum();
            jumps - (q - c) * vx
        })
        .collect()
}

/// `-(V(phi(x,t)) - V(x)) - int_0^t inf_a {int V dq~ - (q - c) V} dtau`,
/// segment-exact for the piecewise-constant extension of `v`.
pub fn oe_residual(model: &PdmdpModel, v: &ValueTable, x: StatePoint, t: f64) -> Result<f64, SolverError> {
    let Value::Finite(vx) = v.at(&x, 0) else {
        return Err(SolverError::OutsideFiniteSet(x));
    };
    let flow = model.flow();
    let mut cuts = v.grid().all_positions();
    cuts.extend(model.grid().breakpoints(x.mode));
    let mut times: Vec<f64> = flow.crossing_times(&x, &cuts).into_iter().filter(|s| *s < t).collect();
    times.push(t);
    let mut rhs = 0.0;
    let mut start = 0.0;
    for &end in &times {
        if end > start {
            let mid = flow.advance(&x, 0.5 * (start + end));
            let inf = oe_terms(model, v, &mid).into_iter().fold(f64::INFINITY, f64::min);
            rhs += inf * (end - start);
        }
        start = end;
    }
    let lhs = -(v.at(&flow.advance(&x, t), 0).as_f64() - vx);
    Ok(lhs - rhs)
}

/// A deterministic stationary selector on the node cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Selector {
    /// `actions[mode][node]`.
    pub actions: Vec<Vec<usize>>,
    pub policy: StationaryPolicy,
}

/// Argmin of the optimality-equation terms at every node of the finite set
/// (first index on ties); action 0 elsewhere. With parities, the selector
/// must not depend on the parity.
pub fn extract_selector<M: Tabulated>(model: &M, v: &ValueTable) -> Result<Selector, SolverError> {
    let base = model.base();
    let grid = v.grid();
    let mut actions: Vec<Vec<usize>> = (0..grid.modes()).map(|m| vec![0; grid.nodes(m).len()]).collect();
    for (m, k, p) in grid.points() {
        let mut chosen = None;
        for parity in 0..v.parities() {
            let a = if v.get(m, k, parity).is_finite() {
                let terms = oe_terms(model, v, &model.state_at(p, parity));
                let mut best = 0;
                for (a, t) in terms.iter().enumerate() {
                    if *t < terms[best] {
                        best = a;
                    }
                }
                best
            } else {
                0
            };
            match chosen {
                None => chosen = Some(a),
                Some(b) if b != a => return Err(SolverError::ParityDependentSelector { mode: m, node: k }),
                _ => {}
            }
        }
        actions[m][k] = chosen.unwrap_or(0);
    }
    let n = base.action_count();
    let table = actions
        .iter()
        .map(|row| row.iter().map(|&a| ActionDistribution::dirac(n, a)).collect())
        .collect();
    let policy = StationaryPolicy::new(base.flow().clone(), grid.cells(), table)?;
    Ok(Selector { actions, policy })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solved {
    pub solution: Solution,
    pub selector: Selector,
}

pub fn solve_direct(model: &PdmdpModel, config: &SolverConfig) -> Result<Solved, SolverError> {
    let solution = value_iterate(model, config)?;
    let selector = extract_selector(model, &solution.values)?;
    Ok(Solved { solution, selector })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuxSolved {
    /// Parity-collapsed values on the original state space.
    pub values: ValueTable,
    pub selector: Selector,
    /// Max parity gap over all grid states and iterations.
    pub parity_gap: f64,
    pub solution: Solution,
}

/// Solve through the uniformized model and collapse the parity.
///
/// Fictitious jumps land on the flowed point, which on a drifting mode lies
/// between nodes; the piecewise-constant table then credits it with the
/// value of the node to its left. On zero-drift models this is exact, on
/// drifting ones it biases the result upward by an amount growing with
/// `lambda` and the node spacing.
pub fn solve_via_auxiliary(model: &PdmdpModel, lambda: f64, config: &SolverConfig) -> Result<AuxSolved, SolverError> {
    let aux = build_auxiliary(model, lambda)?;
    let solution = value_iterate(&aux, config)?;
    let selector = extract_selector(&aux, &solution.values)?;
    let aux_values = &solution.values;
    let mut values = ValueTable::constant(aux_values.grid().clone(), 1, 1.0);
    for (m, k, _) in aux_values.grid().points() {
        values.set(m, k, 0, aux_values.get(m, k, 0));
    }
    let parity_gap = solution.parity_gaps.iter().copied().fold(0.0, f64::max);
    Ok(AuxSolved {
        values,
        selector,
        parity_gap,
        solution,
    })
}

/// Finite sup change of the direct solution from depth `d` to `d + 1`;
/// `None` if the finite sets differ.
pub fn refinement_gap(model: &PdmdpModel, config: &SolverConfig) -> Result<Option<f64>, SolverError> {
    let coarse = value_iterate(model, config)?;
    let fine = value_iterate(
        model,
        &SolverConfig {
            depth: config.depth + 1,
            ..config.clone()
        },
    )?;
    Ok(coarse.values.finite_sup_distance(&fine.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PostJump;

    fn two_state(q: f64, c: f64) -> PdmdpModel {
        PdmdpModel::builder(["s1", "s2"], ["a"])
            .rate("s1", 0, "a", "s2", q, PostJump::Keep)
            .cost("s1", 0, "a", c)
            .build()
            .unwrap()
    }

    #[test]
    fn one_step_closed_forms() {
        let cfg = SolverConfig::default();
        let m = two_state(2.0, 1.0);
        let v0 = ValueTable::constant(NodeGrid::for_model(&m), 1, 1.0);
        let v1 = bellman_t(&m, &v0, &cfg).unwrap();
        assert!((v1.get(0, 0, 0).as_f64() - 2.0).abs() < 1e-14);
        assert_eq!(v1.get(1, 0, 0), Value::Finite(1.0));
        let div = bellman_t(&two_state(1.0, 1.0), &v0, &cfg).unwrap();
        assert_eq!(div.get(0, 0, 0), Value::Infinite);
    }

    #[test]
    fn control_set_sizes() {
        assert_eq!(control_set(2, 0, 1.0, 100).unwrap().len(), 4);
        assert_eq!(control_set(2, 2, 1.0, 100).unwrap().len(), 32);
        assert!(control_set(3, 4, 1.0, 1000).is_err());
    }

    #[test]
    fn zero_cost_is_one() {
        let m = two_state(2.0, 0.0);
        let s = value_iterate(&m, &SolverConfig::default()).unwrap();
        assert!(s.converged);
        assert_eq!(s.iterations, 1);
        assert!(s.values.values().iter().all(|v| *v == Value::Finite(1.0)));
    }
}
