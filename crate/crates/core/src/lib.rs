//! Piecewise deterministic Markov decision processes on finite-mode,
//! drift-line state spaces: exact trajectory simulation under relaxed
//! history-dependent policies, uniformization with fictitious jumps and
//! thinning, the induced discrete-time kernel, and risk-sensitive value
//! iteration.

pub mod control;
pub mod dtmdp;
pub mod io;
pub mod model;
pub mod profile;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod stats;
pub mod uniformizer;

pub use control::RelaxedControl;
pub use model::{ActionDistribution, JumpModel, PdmdpModel, PostJump, StatePoint};
