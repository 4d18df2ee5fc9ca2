use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::history::History;
use crate::control::RelaxedControl;
use crate::model::{ActionDistribution, CellGrid, Flow, PdmdpModel, StatePoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("policy table has {got} modes, model has {expected}")]
    ModeCount { expected: usize, got: usize },
    #[error("mode {mode}: {got} cell entries for {expected} cells")]
    CellCount { mode: usize, expected: usize, got: usize },
    #[error("distribution over {got} actions, model has {expected}")]
    ActionCount { expected: usize, got: usize },
    #[error("markov policy needs at least one control")]
    EmptyMarkov,
}

/// A history-dependent relaxed policy: given `h_n` it returns the control
/// `s -> pi_n(da | h_n, s)` used until the next jump.
pub trait ControlPolicy<S>: Send + Sync {
    fn control(&self, history: &History<S>) -> RelaxedControl;
}

impl<S, P: ControlPolicy<S> + ?Sized> ControlPolicy<S> for &P {
    fn control(&self, history: &History<S>) -> RelaxedControl {
        (**self).control(history)
    }
}

/// Feedback on the current state: the distribution is looked up in the cell
/// of the moving point, so the control switches at cell crossings.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryPolicy {
    flow: Flow,
    cells: CellGrid,
    table: Vec<Vec<ActionDistribution>>,
}

impl StationaryPolicy {
    pub fn new(flow: Flow, cells: CellGrid, table: Vec<Vec<ActionDistribution>>) -> Result<Self, PolicyError> {
        if table.len() != cells.modes() || flow.drifts().len() != cells.modes() {
            return Err(PolicyError::ModeCount {
                expected: cells.modes(),
                got: table.len(),
            });
        }
        let n = table.first().and_then(|r| r.first()).map_or(0, |d| d.len());
        for (m, row) in table.iter().enumerate() {
            if row.len() != cells.cell_count(m) {
                return Err(PolicyError::CellCount {
                    mode: m,
                    expected: cells.cell_count(m),
                    got: row.len(),
                });
            }
            if let Some(d) = row.iter().find(|d| d.len() != n) {
                return Err(PolicyError::ActionCount { expected: n, got: d.len() });
            }
        }
        Ok(Self { flow, cells, table })
    }

    /// One distribution per model cell.
    pub fn on_model_cells(model: &PdmdpModel, table: Vec<Vec<ActionDistribution>>) -> Result<Self, PolicyError> {
        if let Some(d) = table.iter().flatten().find(|d| d.len() != model.action_count()) {
            return Err(PolicyError::ActionCount {
                expected: model.action_count(),
                got: d.len(),
            });
        }
        Self::new(model.flow().clone(), model.grid().clone(), table)
    }

    /// The same action everywhere.
    pub fn constant(model: &PdmdpModel, action: usize) -> Self {
        let n = model.action_count();
        let table = (0..model.mode_count())
            .map(|m| vec![ActionDistribution::dirac(n, action); model.grid().cell_count(m)])
            .collect();
        Self::new(model.flow().clone(), model.grid().clone(), table).expect("shapes match the model")
    }

    pub fn cells(&self) -> &CellGrid {
        &self.cells
    }

    pub fn table(&self) -> &[Vec<ActionDistribution>] {
        &self.table
    }

    pub fn distribution_at(&self, x: &StatePoint) -> &ActionDistribution {
        &self.table[x.mode][self.cells.cell_of(x.mode, x.position)]
    }

    pub fn action_at(&self, x: &StatePoint) -> Option<usize> {
        self.distribution_at(x).as_dirac()
    }

    pub fn is_deterministic(&self) -> bool {
        self.table.iter().flatten().all(|d| d.as_dirac().is_some())
    }

    pub fn control_from(&self, x: &StatePoint) -> RelaxedControl {
        let times = self.flow.crossing_times(x, self.cells.breakpoints(x.mode));
        let mut segments = Vec::with_capacity(times.len());
        let mut start = 0.0;
        for &t in &times {
            let mid = self.flow.advance(x, 0.5 * (start + t));
            segments.push(self.distribution_at(&mid).clone());
            start = t;
        }
        let tail = self.distribution_at(&self.flow.advance(x, start + 1.0)).clone();
        RelaxedControl::new(times, segments, tail).expect("crossing times are increasing")
    }
}

/// Controls indexed by jump count; the last entry repeats.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovPolicy {
    by_jump: Vec<RelaxedControl>,
}

impl MarkovPolicy {
    pub fn new(by_jump: Vec<RelaxedControl>) -> Result<Self, PolicyError> {
        if by_jump.is_empty() {
            return Err(PolicyError::EmptyMarkov);
        }
        Ok(Self { by_jump })
    }

    pub fn for_jump(&self, n: usize) -> &RelaxedControl {
        &self.by_jump[n.min(self.by_jump.len() - 1)]
    }
}

type Script = dyn Fn(&History<StatePoint>) -> RelaxedControl + Send + Sync;

/// Arbitrary (pure) function of the history.
#[derive(Clone)]
pub struct ScriptedPolicy {
    script: Arc<Script>,
}

impl ScriptedPolicy {
    pub fn new(f: impl Fn(&History<StatePoint>) -> RelaxedControl + Send + Sync + 'static) -> Self {
        Self { script: Arc::new(f) }
    }
}

impl fmt::Debug for ScriptedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ScriptedPolicy(..)")
    }
}

#[derive(Clone, Debug)]
pub enum Policy {
    DeterministicStationary(StationaryPolicy),
    RandomizedStationary(StationaryPolicy),
    MarkovPiecewise(MarkovPolicy),
    Scripted(ScriptedPolicy),
}

impl Policy {
    pub fn kind(&self) -> &'static str {
        match self {
            Policy::DeterministicStationary(_) => "deterministic-stationary",
            Policy::RandomizedStationary(_) => "randomized-stationary",
            Policy::MarkovPiecewise(_) => "markov-piecewise",
            Policy::Scripted(_) => "scripted",
        }
    }
}

impl ControlPolicy<StatePoint> for StationaryPolicy {
    fn control(&self, history: &History<StatePoint>) -> RelaxedControl {
        self.control_from(history.last_state())
    }
}

impl ControlPolicy<StatePoint> for MarkovPolicy {
    fn control(&self, history: &History<StatePoint>) -> RelaxedControl {
        self.for_jump(history.jumps()).clone()
    }
}

impl ControlPolicy<StatePoint> for ScriptedPolicy {
    fn control(&self, history: &History<StatePoint>) -> RelaxedControl {
        (self.script)(history)
    }
}

impl ControlPolicy<StatePoint> for Policy {
    fn control(&self, history: &History<StatePoint>) -> RelaxedControl {
        match self {
            Policy::DeterministicStationary(p) | Policy::RandomizedStationary(p) => p.control(history),
            Policy::MarkovPiecewise(p) => p.control(history),
            Policy::Scripted(p) => p.control(history),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PostJump;

    #[test]
    fn stationary_switches_at_crossings() {
        let m = PdmdpModel::builder(["s"], ["a", "b"])
            .drift("s", 2.0)
            .grid("s", vec![1.0])
            .rate("s", 0, "a", "s", 1.0, PostJump::Reset)
            .build()
            .unwrap();
        let p = StationaryPolicy::on_model_cells(
            &m,
            vec![vec![ActionDistribution::dirac(2, 0), ActionDistribution::dirac(2, 1)]],
        )
        .unwrap();
        let c = p.control_from(&StatePoint::new(0, 0.0));
        assert_eq!(c.breakpoints(), &[0.5]);
        assert_eq!(c.at(0.1), &ActionDistribution::dirac(2, 0));
        assert_eq!(c.at(0.7), &ActionDistribution::dirac(2, 1));
        assert!(p.is_deterministic());
    }

    #[test]
    fn markov_repeats_last() {
        let d = |a| RelaxedControl::constant(ActionDistribution::dirac(2, a));
        let p = MarkovPolicy::new(vec![d(0), d(1)]).unwrap();
        assert_eq!(p.for_jump(0), &d(0));
        assert_eq!(p.for_jump(7), &d(1));
        assert!(MarkovPolicy::new(vec![]).is_err());
    }
}
