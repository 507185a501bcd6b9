//! The choice problem: prior, options with state-dependent payoffs, and the
//! layered information structure the agent learns through.

use thiserror::Error;

use crate::info::{Distribution, InfoError};
use crate::partition::{Event, LayeredStructure, StateSpace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("a choice problem needs at least two options, got {0}")]
    TooFewOptions(usize),
    #[error("a choice problem needs at least two states")]
    TooFewStates,
    #[error("option `{option}` has {got} payoffs, expected {expected}")]
    PayoffShape {
        option: String,
        got: usize,
        expected: usize,
    },
    #[error("option `{option}` has a non-finite payoff in state `{state}`")]
    NonFinitePayoff { option: String, state: String },
    #[error("{0}")]
    Mismatch(String),
    #[error(transparent)]
    Info(#[from] InfoError),
}

/// Cells of each refinement level and their relationships, precomputed once
/// per problem. Level `k` (`0 ≤ k < M`) is the join of the `k` cheapest
/// layers; level 0 is the single cell holding every state. The deepest level
/// `M − 1` carries the solver's free variables.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LevelGeometry {
    /// `cells[k]` are the blocks of level `k`.
    pub cells: Vec<Vec<Event>>,
    /// `mass[k][c]` is the prior mass of cell `c` at level `k`.
    pub mass: Vec<Vec<f64>>,
    /// `cell_of_state[k][ω]` is the level-`k` cell containing `ω`.
    pub cell_of_state: Vec<Vec<usize>>,
    /// `parent[k][c]` is the level-`k−1` cell containing cell `c` of level `k`
    /// (unused for `k = 0`).
    pub parent: Vec<Vec<usize>>,
    /// `deep_ancestor[k][b]` is the level-`k` cell containing deep cell `b`.
    pub deep_ancestor: Vec<Vec<usize>>,
    /// Exponent on each level's choice probability in the choice rule.
    pub weights: Vec<f64>,
    pub top_multiplier: f64,
}

impl LevelGeometry {
    fn new(layers: &LayeredStructure, prior: &Distribution) -> Self {
        let chain = layers.refinement_chain();
        let depth = layers.depth();
        let n_states = layers.n_states();
        let cells: Vec<Vec<Event>> = chain[..depth].to_vec();
        let mass = cells
            .iter()
            .map(|lvl| lvl.iter().map(|c| prior.mass(*c)).collect())
            .collect();
        let cell_of_state: Vec<Vec<usize>> = cells
            .iter()
            .map(|lvl| {
                (0..n_states)
                    .map(|s| lvl.iter().position(|c| c.contains(s)).unwrap())
                    .collect()
            })
            .collect();
        let parent = cells
            .iter()
            .enumerate()
            .map(|(k, lvl)| {
                lvl.iter()
                    .map(|c| {
                        if k == 0 {
                            0
                        } else {
                            cell_of_state[k - 1][c.first().unwrap()]
                        }
                    })
                    .collect()
            })
            .collect();
        let deep = &cells[depth - 1];
        let deep_ancestor = (0..depth)
            .map(|k| {
                deep.iter()
                    .map(|b| cell_of_state[k][b.first().unwrap()])
                    .collect()
            })
            .collect();
        Self {
            cells,
            mass,
            cell_of_state,
            parent,
            deep_ancestor,
            weights: layers.level_weights(),
            top_multiplier: layers.top_multiplier(),
        }
    }

    pub fn depth(&self) -> usize {
        self.cells.len()
    }

    pub fn deep_cells(&self) -> &[Event] {
        &self.cells[self.depth() - 1]
    }

    pub fn deep_mass(&self) -> &[f64] {
        &self.mass[self.depth() - 1]
    }
}

/// Prior, options, payoffs `v_n(ω)` and the layered information structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProblem {
    space: StateSpace,
    prior: Distribution,
    options: Vec<String>,
    payoffs: Vec<Vec<f64>>,
    layers: LayeredStructure,
    geometry: LevelGeometry,
}

impl ChoiceProblem {
    /// `payoffs[n][ω]` is the value of option `n` in state `ω`.
    pub fn new(
        space: StateSpace,
        prior: Distribution,
        options: Vec<String>,
        payoffs: Vec<Vec<f64>>,
        layers: LayeredStructure,
    ) -> Result<Self, ProblemError> {
        let n_states = space.len();
        if n_states < 2 {
            return Err(ProblemError::TooFewStates);
        }
        if options.len() < 2 {
            return Err(ProblemError::TooFewOptions(options.len()));
        }
        if prior.len() != n_states {
            return Err(ProblemError::Mismatch(format!(
                "prior has {} entries, state space has {n_states}",
                prior.len()
            )));
        }
        if layers.n_states() != n_states {
            return Err(ProblemError::Mismatch(format!(
                "layers cover {} states, state space has {n_states}",
                layers.n_states()
            )));
        }
        if payoffs.len() != options.len() {
            return Err(ProblemError::Mismatch(format!(
                "{} payoff rows for {} options",
                payoffs.len(),
                options.len()
            )));
        }
        for (name, row) in options.iter().zip(&payoffs) {
            if row.len() != n_states {
                return Err(ProblemError::PayoffShape {
                    option: name.clone(),
                    got: row.len(),
                    expected: n_states,
                });
            }
            if let Some(s) = row.iter().position(|v| !v.is_finite()) {
                return Err(ProblemError::NonFinitePayoff {
                    option: name.clone(),
                    state: space.label(s).to_string(),
                });
            }
        }
        let geometry = LevelGeometry::new(&layers, &prior);
        Ok(Self {
            space,
            prior,
            options,
            payoffs,
            layers,
            geometry,
        })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn prior(&self) -> &Distribution {
        &self.prior
    }

    pub fn options(&self) -> &[String] {
        &self.options
    }

    pub fn n_options(&self) -> usize {
        self.options.len()
    }

    pub fn n_states(&self) -> usize {
        self.space.len()
    }

    pub fn payoffs(&self) -> &[Vec<f64>] {
        &self.payoffs
    }

    pub fn payoff(&self, option: usize, state: usize) -> f64 {
        self.payoffs[option][state]
    }

    pub fn layers(&self) -> &LayeredStructure {
        &self.layers
    }

    /// Blocks of the join of every layer but the most expensive one; the
    /// solver chooses choice probabilities on these cells.
    pub fn deep_cells(&self) -> &[Event] {
        self.geometry.deep_cells()
    }

    /// Length of the free-variable vector, `deep cells × options`.
    pub fn n_free(&self) -> usize {
        self.deep_cells().len() * self.n_options()
    }

    pub(crate) fn geometry(&self) -> &LevelGeometry {
        &self.geometry
    }

    /// The same problem with a different prior.
    pub fn with_prior(&self, prior: Distribution) -> Result<Self, ProblemError> {
        Self::new(
            self.space.clone(),
            prior,
            self.options.clone(),
            self.payoffs.clone(),
            self.layers.clone(),
        )
    }

    /// Expected payoff of a state-contingent policy `probs[ω][n]`.
    pub fn expected_payoff(&self, probs: &[Vec<f64>]) -> f64 {
        crate::info::compensated_sum((0..self.n_states()).flat_map(|s| {
            (0..self.n_options()).map(move |n| self.prior.prob(s) * probs[s][n] * self.payoffs[n][s])
        }))
    }
}
