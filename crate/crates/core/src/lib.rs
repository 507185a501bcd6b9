//! Multisource Shannon Entropy (MSSE): information costs built from binary
//! information sources with different multipliers, and the choice behaviour
//! of a rationally inattentive agent who pays those costs.
//!
//! - [`partition`]: events, partitions, joins, and the layer sequence.
//! - [`info`]: entropy, mutual information, strategy costs, total
//!   uncertainty and policy costs.
//! - [`problem`] and [`solver`]: the agent's choice problem and its solution.
//! - [`fit`]: conditional-logit estimation of perceived values from choices.
//! - [`oracle`]: brute-force reference computations used for verification.
//! - [`io`] and [`cli`]: problem files, CSV output and the command line.

pub mod cli;
pub mod fit;
pub mod info;
pub mod io;
pub mod oracle;
pub mod partition;
pub mod problem;
pub mod solver;

pub use info::{Distribution, LearningStrategy};
pub use partition::{Event, InfoSource, LayeredStructure, Partition, StateSpace};
pub use problem::ChoiceProblem;
pub use solver::{Method, Policy, Solution, SolverOptions};
