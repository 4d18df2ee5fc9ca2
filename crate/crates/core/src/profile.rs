//! Piecewise-constant profile of intensity and cost along one sojourn.
//!
//! Along the flow from a state under a piecewise-constant control, the mixed
//! rates only change at control breakpoints and at grid crossings, so the
//! integrated intensity is piecewise linear and can be inverted exactly.

use crate::control::RelaxedControl;
use crate::model::JumpModel;

#[derive(Clone, Debug)]
pub struct Segment<S> {
    pub start: f64,
    /// `f64::INFINITY` for the tail segment.
    pub end: f64,
    /// Index into the control's pieces.
    pub piece: usize,
    /// State at an interior point of the segment; carries its cell.
    pub state: S,
    pub intensity: f64,
    pub cost: f64,
    /// Integrated intensity up to `start`.
    pub lambda_start: f64,
    /// Integrated cost up to `start`.
    pub cost_start: f64,
}

impl<S> Segment<S> {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_tail(&self) -> bool {
        self.end.is_infinite()
    }
}

#[derive(Clone, Debug)]
pub struct Profile<S> {
    segments: Vec<Segment<S>>,
}

/// Integral of a constant rate over `[0, len)`, with `0 * inf = 0`.
fn ramp(rate: f64, len: f64) -> f64 {
    if rate == 0.0 {
        0.0
    } else {
        rate * len
    }
}

impl<S: Clone> Profile<S> {
    /// `extra` lists further positions whose crossings must start a new
    /// segment (value-table nodes, other modes' breakpoints).
    pub fn build<M>(model: &M, x: &S, control: &RelaxedControl, extra: &[f64]) -> Self
    where
        M: JumpModel<State = S>,
    {
        let base = model.base();
        let p = model.point(x);
        let mut cuts: Vec<f64> = control.breakpoints().to_vec();
        cuts.extend(base.flow().crossing_times(&p, base.grid().breakpoints(p.mode)));
        if !extra.is_empty() {
            cuts.extend(base.flow().crossing_times(&p, extra));
        }
        cuts.extend(base.flow().crossing_times(&p, &base.kernel().self_landing_points(p.mode)));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut segments = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0.0;
        let mut lambda = 0.0;
        let mut cost_acc = 0.0;
        for k in 0..=cuts.len() {
            let end = cuts.get(k).copied().unwrap_or(f64::INFINITY);
            let mid = if end.is_finite() {
                0.5 * (start + end)
            } else {
                start + 1.0
            };
            let piece = control.piece_index(mid);
            let state = model.advance(x, mid);
            let (intensity, cost) = model.rates(&state, &control.pieces()[piece]);
            segments.push(Segment {
                start,
                end,
                piece,
                state,
                intensity,
                cost,
                lambda_start: lambda,
                cost_start: cost_acc,
            });
            lambda += ramp(intensity, end - start);
            cost_acc += ramp(cost, end - start);
            start = end;
        }
        Self { segments }
    }

    pub fn segments(&self) -> &[Segment<S>] {
        &self.segments
    }

    fn locate(&self, t: f64) -> &Segment<S> {
        let k = self.segments.partition_point(|s| s.end <= t);
        &self.segments[k.min(self.segments.len() - 1)]
    }

    /// `int_0^t q ds`; `t` may be infinite.
    pub fn integrated_intensity(&self, t: f64) -> f64 {
        let s = self.locate(t);
        s.lambda_start + ramp(s.intensity, t - s.start)
    }

    /// `int_0^inf q ds`, infinite unless the tail intensity is zero.
    pub fn total_intensity(&self) -> f64 {
        self.integrated_intensity(f64::INFINITY)
    }

    /// `int_0^t c ds`; `t` may be infinite.
    pub fn cost_integral(&self, t: f64) -> f64 {
        let s = self.locate(t);
        s.cost_start + ramp(s.cost, t - s.start)
    }

    /// Smallest `t` with integrated intensity equal to `level`, with the
    /// index of its segment; `None` when the total intensity does not reach
    /// `level` (no jump ever happens).
    pub fn invert(&self, level: f64) -> Option<(f64, usize)> {
        if level >= self.total_intensity() {
            return None;
        }
        for (k, s) in self.segments.iter().enumerate() {
            if s.intensity <= 0.0 {
                continue;
            }
            let end_lambda = s.lambda_start + ramp(s.intensity, s.len());
            if level < end_lambda {
                let t = s.start + (level - s.lambda_start) / s.intensity;
                // Keep the time inside its segment despite rounding.
                let t = if s.end.is_finite() { t.min(s.end) } else { t };
                return Some((t.max(s.start), k));
            }
        }
        None
    }
}
