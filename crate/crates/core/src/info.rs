//! Shannon entropy, conditional entropy and mutual information over
//! partitions, the cost of learning strategies, the layered total
//! uncertainty, and the cost of a choice policy.
//!
//! All logarithms are natural, so multipliers are in payoff units per nat.
//! `0·ln 0` is taken to be `0`; conditioning on a zero-probability cell
//! contributes nothing to an expectation.

use thiserror::Error;

use crate::partition::{refine_blocks, Event, LayeredStructure, Partition, PartitionError};

/// Tolerance on the total mass of a [`Distribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InfoError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("cannot condition on an event of zero probability")]
    ZeroProbability,
    #[error("size mismatch: {0}")]
    Mismatch(String),
    #[error("learning strategy repeats partition {0}")]
    RepeatedPartition(Partition),
    #[error("multiplier must be positive and finite, got {0}")]
    NonPositiveMultiplier(f64),
    #[error("policy row for state {state} is not a probability vector")]
    InvalidPolicy { state: usize },
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

pub type Result<T> = std::result::Result<T, InfoError>;

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `-p ln p` with the `0 ln 0 = 0` convention.
#[inline]
pub fn plogp_neg(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.ln()
    } else {
        0.0
    }
}

/// A probability vector over the states of a finite space.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(InfoError::InvalidDistribution("no states".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(InfoError::InvalidDistribution(format!(
                "entry {p} is not a finite non-negative number"
            )));
        }
        let total = compensated_sum(probs.iter().copied());
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(InfoError::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Scales non-negative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total = compensated_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(InfoError::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, state: usize) -> f64 {
        self.probs[state]
    }

    pub fn mass(&self, event: Event) -> f64 {
        compensated_sum(event.states().map(|s| self.probs[s]))
    }

    /// Posterior given `event`.
    pub fn condition(&self, event: Event) -> Result<Distribution> {
        let m = self.mass(event);
        if m <= 0.0 {
            return Err(InfoError::ZeroProbability);
        }
        Ok(Self {
            probs: (0..self.probs.len())
                .map(|s| if event.contains(s) { self.probs[s] / m } else { 0.0 })
                .collect(),
        })
    }
}

fn check_len(n_states: usize, mu: &Distribution) -> Result<()> {
    if n_states != mu.len() {
        return Err(InfoError::Mismatch(format!(
            "partition has {n_states} states, distribution has {}",
            mu.len()
        )));
    }
    Ok(())
}

/// Clamped at zero: a block mass rounded just above one would otherwise
/// give a tiny negative entropy.
fn blocks_entropy(blocks: &[Event], mu: &Distribution) -> f64 {
    compensated_sum(blocks.iter().map(|b| plogp_neg(mu.mass(*b)))).max(0.0)
}

/// Expected entropy of `blocks` within each cell of `given`.
fn blocks_conditional_entropy(blocks: &[Event], given: &[Event], mu: &Distribution) -> f64 {
    compensated_sum(given.iter().map(|g| {
        let mg = mu.mass(*g);
        if mg <= 0.0 {
            return 0.0;
        }
        let h = compensated_sum(
            blocks
                .iter()
                .map(|b| plogp_neg(mu.mass(b.intersect(*g)) / mg)),
        );
        mg * h.max(0.0)
    }))
}

/// `H(P, μ) = −Σ μ(A) ln μ(A)`.
pub fn shannon_entropy(p: &Partition, mu: &Distribution) -> Result<f64> {
    check_len(p.n_states(), mu)?;
    Ok(blocks_entropy(p.blocks(), mu))
}

/// `Σ_B μ(B) H(p, μ(·|B))` over the cells `B` of `given` with positive mass.
pub fn conditional_entropy(p: &Partition, given: &Partition, mu: &Distribution) -> Result<f64> {
    check_len(p.n_states(), mu)?;
    if given.n_states() != p.n_states() {
        return Err(PartitionError::Mismatch(p.n_states(), given.n_states()).into());
    }
    Ok(blocks_conditional_entropy(p.blocks(), given.blocks(), mu))
}

pub fn mutual_information(p: &Partition, q: &Partition, mu: &Distribution) -> Result<f64> {
    check_len(p.n_states(), mu)?;
    if q.n_states() != p.n_states() {
        return Err(PartitionError::Mismatch(p.n_states(), q.n_states()).into());
    }
    let mut terms = Vec::with_capacity(p.len() * q.len());
    for a in p.blocks() {
        let ma = mu.mass(*a);
        for b in q.blocks() {
            let mab = mu.mass(a.intersect(*b));
            if mab > 0.0 {
                let mb = mu.mass(*b);
                terms.push(mab * (mab / (ma * mb)).ln());
            }
        }
    }
    Ok(compensated_sum(terms).max(0.0))
}

/// An ordered sequence of partitions, each priced by its own multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningStrategy {
    steps: Vec<(Partition, f64)>,
}

impl LearningStrategy {
    pub fn new(steps: Vec<(Partition, f64)>) -> Result<Self> {
        for (i, (p, lambda)) in steps.iter().enumerate() {
            if !(*lambda > 0.0 && lambda.is_finite()) {
                return Err(InfoError::NonPositiveMultiplier(*lambda));
            }
            if steps[..i].iter().any(|(q, _)| q == p) {
                return Err(InfoError::RepeatedPartition(p.clone()));
            }
            if p.n_states() != steps[0].0.n_states() {
                return Err(PartitionError::Mismatch(steps[0].0.n_states(), p.n_states()).into());
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(Partition, f64)] {
        &self.steps
    }

    /// The same steps with positions `i` and `i + 1` exchanged.
    pub fn swapped(&self, i: usize) -> Self {
        let mut steps = self.steps.clone();
        steps.swap(i, i + 1);
        Self { steps }
    }
}

/// Sum of each step's multiplier times its entropy given every earlier step.
pub fn strategy_cost(s: &LearningStrategy, mu: &Distribution) -> Result<f64> {
    let Some((first, _)) = s.steps.first() else {
        return Ok(0.0);
    };
    check_len(first.n_states(), mu)?;
    let mut known = vec![Event::full(first.n_states())];
    let mut terms = Vec::with_capacity(s.steps.len());
    for (p, lambda) in &s.steps {
        terms.push(lambda * blocks_conditional_entropy(p.blocks(), &known, mu));
        known = refine_blocks(&known, p.blocks());
    }
    Ok(compensated_sum(terms))
}

/// Minimal expected cost of learning the state: each layer's entropy given
/// all cheaper layers, weighted by that layer's multiplier.
pub fn total_uncertainty(layers: &LayeredStructure, mu: &Distribution) -> Result<f64> {
    check_len(layers.n_states(), mu)?;
    let chain = layers.refinement_chain();
    Ok(compensated_sum(layers.layers().iter().enumerate().map(
        |(k, layer)| layer.multiplier * blocks_conditional_entropy(layer.partition.blocks(), &chain[k], mu),
    )))
}

/// Choice probabilities aggregated over the cells of one refinement level.
pub(crate) fn aggregate_over(
    cells: &[Event],
    state_probs: &[Vec<f64>],
    mu: &Distribution,
    n_options: usize,
) -> Vec<Option<Vec<f64>>> {
    cells
        .iter()
        .map(|c| {
            let m = mu.mass(*c);
            (m > 0.0).then(|| {
                (0..n_options)
                    .map(|n| compensated_sum(c.states().map(|s| state_probs[s][n] * mu.prob(s))) / m)
                    .collect()
            })
        })
        .collect()
}

/// Information cost of a state-contingent choice policy, written in choice
/// probabilities: `λ1·H(n) + Σ_k (λk+1 − λk)·H(n | level k) − λM·H(n | ω)`.
///
/// `state_probs[ω][n]` is the probability of choosing `n` in state `ω`.
pub fn policy_cost(
    state_probs: &[Vec<f64>],
    mu: &Distribution,
    layers: &LayeredStructure,
) -> Result<f64> {
    check_len(layers.n_states(), mu)?;
    if state_probs.len() != mu.len() {
        return Err(InfoError::Mismatch(format!(
            "policy has {} states, prior has {}",
            state_probs.len(),
            mu.len()
        )));
    }
    let n_options = state_probs.first().map_or(0, Vec::len);
    for (s, row) in state_probs.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if row.len() != n_options
            || row.iter().any(|p| !(p.is_finite() && *p >= 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(InfoError::InvalidPolicy { state: s });
        }
    }
    let chain = layers.refinement_chain();
    let lambdas = layers.multipliers();
    let m = lambdas.len();

    let mut terms = Vec::with_capacity(m + 1);
    for (k, cells) in chain.iter().enumerate().take(m) {
        let coef = if k == 0 {
            lambdas[0]
        } else {
            lambdas[k] - lambdas[k - 1]
        };
        let agg = aggregate_over(cells, state_probs, mu, n_options);
        let h = compensated_sum(cells.iter().zip(&agg).filter_map(|(c, a)| {
            a.as_ref()
                .map(|a| mu.mass(*c) * compensated_sum(a.iter().map(|p| plogp_neg(*p))))
        }));
        terms.push(coef * h);
    }
    let h_state = compensated_sum(
        state_probs
            .iter()
            .enumerate()
            .map(|(s, row)| mu.prob(s) * compensated_sum(row.iter().map(|p| plogp_neg(*p)))),
    );
    terms.push(-lambdas[m - 1] * h_state);
    Ok(compensated_sum(terms))
}
