//! Controlled trajectories of the marked point process and Monte Carlo
//! estimates of the risk-sensitive total cost and the long-run average cost.
//!
//! Sojourns are drawn by exact inversion of `1 - exp(-Lambda(t))`: with
//! piecewise-constant rates along the flow `Lambda` is piecewise linear.

mod history;
mod policy;

use rand::distr::Open01;
use rand::Rng;
use rayon::prelude::*;

pub use history::{History, HistoryEntry};
pub use policy::{ControlPolicy, MarkovPolicy, Policy, PolicyError, ScriptedPolicy, StationaryPolicy};

use crate::control::RelaxedControl;
use crate::model::JumpModel;
use crate::profile::Profile;
use crate::rng::{path_rng, PathRng};

/// Exponents above this (natural-log scale) overflow `exp` in double precision.
pub const EXPONENT_OVERFLOW: f64 = 700.0;

/// `int_0^t q_{phi(x,s)}(control_s) ds`, exact.
pub fn integrated_intensity<M: JumpModel>(model: &M, x: &M::State, control: &RelaxedControl, t: f64) -> f64 {
    Profile::build(model, x, control, &[]).integrated_intensity(t)
}

#[derive(Clone, Debug, PartialEq)]
pub enum JumpOutcome<S> {
    Jump { sojourn: f64, to: S, fictitious: bool },
    /// Infinite sojourn: the process drifts forever and the cemetery is the mark.
    Absorbed,
}

/// Draw `(theta_{n+1}, x_{n+1})` given `h_n`.
pub fn sample_jump<M, P>(rng: &mut PathRng, model: &M, history: &History<M::State>, policy: &P) -> JumpOutcome<M::State>
where
    M: JumpModel,
    P: ControlPolicy<M::State> + ?Sized,
{
    assert!(!history.is_terminal(), "cannot extend a terminal history");
    let control = policy.control(history);
    let x = history.last_state();
    let profile = Profile::build(model, x, &control, &[]);
    sample_from_profile(rng, model, x, &control, &profile)
}

fn sample_from_profile<M: JumpModel>(
    rng: &mut PathRng,
    model: &M,
    x: &M::State,
    control: &RelaxedControl,
    profile: &Profile<M::State>,
) -> JumpOutcome<M::State> {
    let u: f64 = rng.sample(Open01);
    let level = -u.ln();
    let Some((t, k)) = profile.invert(level) else {
        return JumpOutcome::Absorbed;
    };
    let seg = &profile.segments()[k];
    let mu = &control.pieces()[seg.piece];
    let at = model.advance(x, t);
    let mut atoms = model.jumps(&seg.state, &at, mu);
    if atoms.is_empty() {
        // Only reachable when `at` rounds onto a landing point of its own row.
        atoms = model.jumps(&seg.state, &seg.state, mu);
    }
    let total: f64 = atoms.iter().map(|j| j.weight).sum();
    let mut pick = rng.random::<f64>() * total;
    let last = atoms.len() - 1;
    for (i, j) in atoms.into_iter().enumerate() {
        if pick < j.weight || i == last {
            return JumpOutcome::Jump {
                sojourn: t,
                to: j.to,
                fictitious: j.fictitious,
            };
        }
        pick -= j.weight;
    }
    unreachable!("atom list is nonempty")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    /// Budget on honest jumps.
    pub max_jumps: usize,
    pub time_horizon: f64,
    /// Budget on fictitious jumps (explosion guard for auxiliary models).
    pub max_fictitious: usize,
}

impl Limits {
    pub fn new(max_jumps: usize, time_horizon: f64) -> Self {
        Self {
            max_jumps,
            time_horizon,
            max_fictitious: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    JumpBudget,
    TimeHorizon,
    Absorption,
    FictitiousBudget,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::JumpBudget => "jump-budget",
            Termination::TimeHorizon => "time-horizon",
            Termination::Absorption => "absorption",
            Termination::FictitiousBudget => "fictitious-budget",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<S> {
    pub history: History<S>,
    pub terminated_by: Termination,
    /// `int_0^{T} c(xi_t, pi_t) dt` up to the horizon `T`.
    pub cost_integral: f64,
}

impl<S: Clone> Trajectory<S> {
    pub fn honest_jumps(&self) -> usize {
        self.history.entries().iter().skip(1).filter(|e| !e.fictitious).count()
    }
}

/// Iterate [`sample_jump`] from `x0` until a limit is hit or the process is
/// absorbed. Once the jump budget is spent the cost keeps accruing along the
/// flow up to the horizon, with no further jumps.
pub fn simulate_trajectory<M, P>(rng: &mut PathRng, model: &M, policy: &P, x0: M::State, limits: Limits) -> Trajectory<M::State>
where
    M: JumpModel,
    P: ControlPolicy<M::State> + ?Sized,
{
    let mut history = History::new(x0);
    let mut t = 0.0;
    let mut cost = 0.0;
    let mut honest = 0usize;
    let mut fictitious = 0usize;
    let terminated_by = loop {
        let control = policy.control(&history);
        let x = history.last_state().clone();
        let profile = Profile::build(model, &x, &control, &[]);
        let remaining = limits.time_horizon - t;
        if honest >= limits.max_jumps {
            cost += profile.cost_integral(remaining);
            break Termination::JumpBudget;
        }
        if fictitious >= limits.max_fictitious {
            cost += profile.cost_integral(remaining);
            break Termination::FictitiousBudget;
        }
        match sample_from_profile(rng, model, &x, &control, &profile) {
            JumpOutcome::Absorbed => {
                cost += profile.cost_integral(remaining);
                history.absorb();
                break Termination::Absorption;
            }
            JumpOutcome::Jump { sojourn, .. } if sojourn > remaining => {
                cost += profile.cost_integral(remaining);
                break Termination::TimeHorizon;
            }
            JumpOutcome::Jump { sojourn, to, fictitious: fict } => {
                cost += profile.cost_integral(sojourn);
                t += sojourn;
                if fict {
                    fictitious += 1;
                } else {
                    honest += 1;
                }
                history.push(to, sojourn, fict);
            }
        }
    };
    Trajectory {
        history,
        terminated_by,
        cost_integral: cost,
    }
}

/// Re-integrate the cost of `traj` from its history alone, replaying the
/// policy on each prefix.
pub fn recompute_cost_integral<M, P>(model: &M, policy: &P, traj: &Trajectory<M::State>, time_horizon: f64) -> f64
where
    M: JumpModel,
    P: ControlPolicy<M::State> + ?Sized,
{
    let h = &traj.history;
    let times = h.jump_times();
    let mut total = 0.0;
    for (n, start) in times.iter().enumerate() {
        let prefix = h.prefix(n);
        let control = policy.control(&prefix);
        let profile = Profile::build(model, prefix.last_state(), &control, &[]);
        let span = if n < h.jumps() {
            h.entries()[n + 1].sojourn
        } else {
            time_horizon - start
        };
        total += profile.cost_integral(span);
    }
    total
}

/// Shared Monte Carlo settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonteCarlo {
    pub n_paths: usize,
    pub seed: u64,
    pub limits: Limits,
}

/// Simulate `n_paths` independent trajectories in parallel; results are in
/// path order.
pub fn simulate_paths<M, P>(model: &M, policy: &P, x0: &M::State, mc: &MonteCarlo) -> Vec<Trajectory<M::State>>
where
    M: JumpModel,
    P: ControlPolicy<M::State> + ?Sized,
{
    (0..mc.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(mc.seed, i);
            simulate_trajectory(&mut rng, model, policy, x0.clone(), mc.limits)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Divergence {
    /// Some path's exponent exceeded [`EXPONENT_OVERFLOW`].
    Overflow { path: usize, exponent: f64 },
    /// The upper tail of the exponent decays too slowly for `E[exp]` to be
    /// finite, at the 3-sigma level.
    HeavyTail { tail_rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RiskEstimate {
    Finite {
        mean: f64,
        standard_error: f64,
        /// Estimated exponential decay rate of the exponent's upper tail.
        tail_rate: Option<f64>,
    },
    Infinite(Divergence),
}

impl RiskEstimate {
    pub fn mean(&self) -> Option<f64> {
        match self {
            RiskEstimate::Finite { mean, .. } => Some(*mean),
            RiskEstimate::Infinite(_) => None,
        }
    }

    pub fn standard_error(&self) -> Option<f64> {
        match self {
            RiskEstimate::Finite { standard_error, .. } => Some(*standard_error),
            RiskEstimate::Infinite(_) => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, RiskEstimate::Infinite(_))
    }
}

/// Sample mean and standard error, summed in index order.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Maximum-likelihood rate of the exponential excesses over the `k+1`-th
/// largest value, with `k` = 1% of the sample (at least 50).
pub fn exponential_tail_rate(exponents: &[f64]) -> Option<(f64, usize)> {
    let k = (exponents.len() / 100).max(50);
    if exponents.len() <= k {
        return None;
    }
    let mut sorted = exponents.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    let excess: f64 = sorted[..k].iter().map(|x| x - threshold).sum();
    if excess <= 0.0 {
        return None;
    }
    Some((k as f64 / excess, k))
}

/// Risk-sensitive criterion summarised from per-path exponents.
pub fn risk_from_exponents(exponents: &[f64]) -> RiskEstimate {
    if let Some((path, &exponent)) = exponents
        .iter()
        .enumerate()
        .find(|(_, e)| **e > EXPONENT_OVERFLOW)
    {
        return RiskEstimate::Infinite(Divergence::Overflow { path, exponent });
    }
    if exponents.iter().all(|e| *e == 0.0) {
        return RiskEstimate::Finite {
            mean: 1.0,
            standard_error: 0.0,
            tail_rate: None,
        };
    }
    let tail = exponential_tail_rate(exponents);
    if let Some((rate, k)) = tail {
        if rate * (1.0 - 3.0 / (k as f64).sqrt()) <= 1.0 {
            return RiskEstimate::Infinite(Divergence::HeavyTail { tail_rate: rate });
        }
    }
    let values: Vec<f64> = exponents.iter().map(|e| e.exp()).collect();
    let (mean, standard_error) = mean_and_se(&values);
    RiskEstimate::Finite {
        mean,
        standard_error,
        tail_rate: tail.map(|t| t.0),
    }
}

/// Monte Carlo estimate of `E[exp(int c dt)]`.
pub fn estimate_risk_cost<M, P>(model: &M, policy: &P, x0: &M::State, mc: &MonteCarlo) -> RiskEstimate
where
    M: JumpModel,
    P: ControlPolicy<M::State> + ?Sized,
{
    let exponents: Vec<f64> = simulate_paths(model, policy, x0, mc)
        .into_iter()
        .map(|t| t.cost_integral)
        .collect();
    risk_from_exponents(&exponents)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AverageCost {
    pub mean: f64,
    pub standard_error: f64,
}

/// Monte Carlo estimate of `E[int_0^T c dt] / T`.
pub fn estimate_average_cost<M, P>(model: &M, policy: &P, x0: &M::State, horizon: f64, n_paths: usize, seed: u64) -> AverageCost
where
    M: JumpModel,
    P: ControlPolicy<M::State> + ?Sized,
{
    assert!(horizon > 0.0, "horizon must be positive");
    let mc = MonteCarlo {
        n_paths,
        seed,
        limits: Limits::new(usize::MAX, horizon),
    };
    let per_path: Vec<f64> = simulate_paths(model, policy, x0, &mc)
        .into_iter()
        .map(|t| t.cost_integral / horizon)
        .collect();
    let (mean, standard_error) = mean_and_se(&per_path);
    AverageCost { mean, standard_error }
}
