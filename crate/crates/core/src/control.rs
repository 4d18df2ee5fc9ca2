//! Relaxed controls: time-indexed action distributions, piecewise constant
//! with a constant tail.

use thiserror::Error;

use crate::model::ActionDistribution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("breakpoints must be positive, finite and strictly increasing")]
    BadBreakpoints,
    #[error("{segments} segment distributions for {breakpoints} breakpoints")]
    SegmentCount { breakpoints: usize, segments: usize },
    #[error("distributions disagree on the number of actions")]
    ActionCount,
}

/// `pieces[k]` applies on `[breakpoints[k-1], breakpoints[k])` with
/// `breakpoints[-1] = 0`; the last piece is the tail on `[last, inf)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedControl {
    breakpoints: Vec<f64>,
    pieces: Vec<ActionDistribution>,
}

impl RelaxedControl {
    pub fn new(
        breakpoints: Vec<f64>,
        segments: Vec<ActionDistribution>,
        tail: ActionDistribution,
    ) -> Result<Self, ControlError> {
        if segments.len() != breakpoints.len() {
            return Err(ControlError::SegmentCount {
                breakpoints: breakpoints.len(),
                segments: segments.len(),
            });
        }
        let ok = breakpoints.iter().all(|b| b.is_finite() && *b > 0.0)
            && breakpoints.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(ControlError::BadBreakpoints);
        }
        let n = tail.len();
        if segments.iter().any(|s| s.len() != n) {
            return Err(ControlError::ActionCount);
        }
        let mut pieces = segments;
        pieces.push(tail);
        Ok(Self { breakpoints, pieces }.canonical())
    }

    pub fn constant(mu: ActionDistribution) -> Self {
        Self {
            breakpoints: Vec::new(),
            pieces: vec![mu],
        }
    }

    // Merge adjacent equal pieces; a.e.-equal controls get one representation.
    fn canonical(self) -> Self {
        let mut breakpoints = Vec::with_capacity(self.breakpoints.len());
        let mut pieces: Vec<ActionDistribution> = Vec::with_capacity(self.pieces.len());
        for (k, p) in self.pieces.into_iter().enumerate() {
            if let Some(last) = pieces.last() {
                if *last == p {
                    continue;
                }
                breakpoints.push(self.breakpoints[k - 1]);
            }
            pieces.push(p);
        }
        Self { breakpoints, pieces }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Piece distributions, the tail last.
    pub fn pieces(&self) -> &[ActionDistribution] {
        &self.pieces
    }

    pub fn tail(&self) -> &ActionDistribution {
        self.pieces.last().expect("a control has at least its tail")
    }

    pub fn piece_index(&self, s: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= s)
    }

    pub fn at(&self, s: f64) -> &ActionDistribution {
        &self.pieces[self.piece_index(s)]
    }

    /// The control `s -> self(s + offset)`.
    pub fn shift(&self, offset: f64) -> Self {
        if offset <= 0.0 {
            return self.clone();
        }
        let first = self.piece_index(offset);
        let breakpoints = self.breakpoints[first..]
            .iter()
            .map(|b| b - offset)
            .collect::<Vec<_>>();
        let pieces = self.pieces[first..].to_vec();
        // Subtraction can round a breakpoint to 0 when it sits just above the offset.
        let keep = breakpoints.iter().take_while(|b| **b <= 0.0).count();
        Self {
            breakpoints: breakpoints[keep..].to_vec(),
            pieces: pieces[keep..].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(a: usize) -> ActionDistribution {
        ActionDistribution::dirac(2, a)
    }

    #[test]
    fn merges_equal_neighbours() {
        let c = RelaxedControl::new(vec![1.0, 2.0], vec![d(0), d(0)], d(1)).unwrap();
        assert_eq!(c.breakpoints(), &[2.0]);
        assert_eq!(c.pieces(), &[d(0), d(1)]);
        let k = RelaxedControl::new(vec![1.0], vec![d(1)], d(1)).unwrap();
        assert_eq!(k, RelaxedControl::constant(d(1)));
    }

    #[test]
    fn rejects_bad_breakpoints() {
        assert_eq!(
            RelaxedControl::new(vec![2.0, 1.0], vec![d(0), d(1)], d(0)),
            Err(ControlError::BadBreakpoints)
        );
        assert_eq!(
            RelaxedControl::new(vec![0.0], vec![d(0)], d(1)),
            Err(ControlError::BadBreakpoints)
        );
        assert!(matches!(
            RelaxedControl::new(vec![1.0], vec![], d(1)),
            Err(ControlError::SegmentCount { .. })
        ));
    }

    #[test]
    fn lookup_and_shift() {
        let c = RelaxedControl::new(vec![1.0], vec![d(0)], d(1)).unwrap();
        assert_eq!(c.at(0.5), &d(0));
        assert_eq!(c.at(1.0), &d(1));
        let s = c.shift(0.6);
        assert!((s.breakpoints()[0] - 0.4).abs() < 1e-15);
        assert_eq!(s.at(0.3), &d(0));
        assert_eq!(s.at(0.5), &d(1));
        assert_eq!(c.shift(1.5), RelaxedControl::constant(d(1)));
        assert_eq!(c.shift(0.0), c);
    }
}
