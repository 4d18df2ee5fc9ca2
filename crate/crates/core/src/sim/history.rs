/// One mark of the process with the sojourn that preceded it.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry<S> {
    pub state: S,
    /// 0 for the initial mark, positive afterwards.
    pub sojourn: f64,
    /// Set by the sampler when the jump came from a fictitious channel.
    pub fictitious: bool,
}

/// `h_n = (x_0, theta_1, x_1, ..., theta_n, x_n)`, plus a terminal flag for
/// an infinite sojourn (absorption into the cemetery).
#[derive(Clone, Debug, PartialEq)]
pub struct History<S> {
    entries: Vec<HistoryEntry<S>>,
    absorbed: bool,
}

impl<S: Clone> History<S> {
    pub fn new(x0: S) -> Self {
        Self {
            entries: vec![HistoryEntry {
                state: x0,
                sojourn: 0.0,
                fictitious: false,
            }],
            absorbed: false,
        }
    }

    pub fn push(&mut self, state: S, sojourn: f64, fictitious: bool) {
        assert!(!self.absorbed, "history is terminal");
        assert!(sojourn > 0.0 && sojourn.is_finite(), "sojourn must be positive and finite");
        self.entries.push(HistoryEntry {
            state,
            sojourn,
            fictitious,
        });
    }

    pub fn absorb(&mut self) {
        self.absorbed = true;
    }

    pub fn is_terminal(&self) -> bool {
        self.absorbed
    }

    pub fn entries(&self) -> &[HistoryEntry<S>] {
        &self.entries
    }

    pub fn initial_state(&self) -> &S {
        &self.entries[0].state
    }

    pub fn last_state(&self) -> &S {
        &self.entries.last().expect("history is never empty").state
    }

    /// Number of jumps `n`.
    pub fn jumps(&self) -> usize {
        self.entries.len() - 1
    }

    /// `t_n`.
    pub fn elapsed(&self) -> f64 {
        self.entries.iter().map(|e| e.sojourn).sum()
    }

    /// `(t_0, ..., t_n)`.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.entries
            .iter()
            .map(|e| {
                t += e.sojourn;
                t
            })
            .collect()
    }

    /// `h_n` for `n <= self.jumps()`, never terminal.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            entries: self.entries[..=n].to_vec(),
            absorbed: false,
        }
    }
}
