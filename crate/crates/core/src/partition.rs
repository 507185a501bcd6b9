//! Finite state spaces, events, partitions and the layer sequence built from
//! binary information sources.
//!
//! Events are bitmasks over at most 64 state positions. A [`Partition`] always
//! has at least two blocks and keeps them sorted by lowest member, so two
//! partitions with the same blocks compare equal structurally.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Largest state space the bitmask representation supports.
pub const MAX_STATES: usize = 64;

/// Largest state space for which binary partitions may be enumerated.
pub const MAX_ENUMERATION_STATES: usize = 16;

/// Relative gap below which two source multipliers are treated as one layer.
pub const MULTIPLIER_MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("state space must contain at least one state")]
    EmptySpace,
    #[error("state space has {0} states, at most {MAX_STATES} are supported")]
    TooManyStates(usize),
    #[error("duplicate state label `{0}`")]
    DuplicateLabel(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("partitions live on different state spaces ({0} vs {1} states)")]
    Mismatch(usize, usize),
    #[error("join collapsed to a single block")]
    Degenerate,
    #[error("multiplier must be positive and finite, got {0}")]
    NonPositiveMultiplier(f64),
    #[error("at least one information source is required")]
    NoSources,
    #[error("sources cannot reveal the state; finest achievable partition is {coarsest}")]
    NotGenerating { coarsest: Partition },
    #[error("enumeration supports at most {MAX_ENUMERATION_STATES} states, got {0}")]
    TooLargeForEnumeration(usize),
    #[error("invalid layered structure: {0}")]
    InvalidLayers(String),
}

pub type Result<T> = std::result::Result<T, PartitionError>;

/// An ordered, labelled finite set of states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl StateSpace {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(PartitionError::EmptySpace);
        }
        if labels.len() > MAX_STATES {
            return Err(PartitionError::TooManyStates(labels.len()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(PartitionError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels, index })
    }

    /// States named `w1`, `w2`, ... `wn`.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| format!("w{i}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, state: usize) -> &str {
        &self.labels[state]
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn full(&self) -> Event {
        Event::full(self.len())
    }
}

/// A subset of the state space, stored as a bitmask.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event(u64);

impl Event {
    pub const EMPTY: Event = Event(0);

    pub const fn from_mask(mask: u64) -> Self {
        Event(mask)
    }

    pub fn singleton(state: usize) -> Self {
        Event(1u64 << state)
    }

    pub fn full(n_states: usize) -> Self {
        if n_states >= 64 {
            Event(u64::MAX)
        } else {
            Event((1u64 << n_states) - 1)
        }
    }

    pub fn from_states<I: IntoIterator<Item = usize>>(states: I) -> Self {
        Event(states.into_iter().fold(0, |m, s| m | (1u64 << s)))
    }

    pub const fn mask(self) -> u64 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, state: usize) -> bool {
        state < 64 && self.0 & (1u64 << state) != 0
    }

    pub fn intersect(self, other: Event) -> Event {
        Event(self.0 & other.0)
    }

    pub fn union(self, other: Event) -> Event {
        Event(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: Event) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Lowest member, used for canonical block ordering.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn states(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let s = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(s)
            }
        })
    }
}

impl fmt::Debug for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.states()).finish()
    }
}

/// Disjoint nonempty events covering the state space, at least two of them.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    n_states: usize,
    blocks: Vec<Event>,
}

impl Partition {
    pub fn new(n_states: usize, blocks: Vec<Event>) -> Result<Self> {
        if n_states == 0 || n_states > MAX_STATES {
            return Err(PartitionError::InvalidPartition(format!(
                "state count {n_states} outside 1..={MAX_STATES}"
            )));
        }
        let full = Event::full(n_states);
        let mut seen = Event::EMPTY;
        for b in &blocks {
            if b.is_empty() {
                return Err(PartitionError::InvalidPartition("empty block".into()));
            }
            if !b.is_subset_of(full) {
                return Err(PartitionError::InvalidPartition(format!(
                    "block {b:?} refers to states outside 0..{n_states}"
                )));
            }
            if !b.intersect(seen).is_empty() {
                return Err(PartitionError::InvalidPartition(format!(
                    "block {b:?} overlaps an earlier block"
                )));
            }
            seen = seen.union(*b);
        }
        if seen != full {
            return Err(PartitionError::InvalidPartition(
                "blocks do not cover the state space".into(),
            ));
        }
        if blocks.len() < 2 {
            return Err(PartitionError::InvalidPartition(
                "a partition needs at least two blocks".into(),
            ));
        }
        Ok(Self::canonical(n_states, blocks))
    }

    fn canonical(n_states: usize, mut blocks: Vec<Event>) -> Self {
        blocks.sort_by_key(|b| b.first());
        Self { n_states, blocks }
    }

    /// Builds a partition from a block label per state.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        let mut by_label: HashMap<usize, u64> = HashMap::new();
        for (s, &l) in labels.iter().enumerate() {
            *by_label.entry(l).or_default() |= 1u64 << s;
        }
        Self::new(labels.len(), by_label.into_values().map(Event).collect())
    }

    /// The partition into `block` and its complement.
    pub fn binary(n_states: usize, block: Event) -> Result<Self> {
        let full = Event::full(n_states);
        Self::new(n_states, vec![block, Event(full.0 & !block.0)])
    }

    /// Every state in its own block.
    pub fn discrete(n_states: usize) -> Result<Self> {
        Self::new(n_states, (0..n_states).map(Event::singleton).collect())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn blocks(&self) -> &[Event] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.blocks.len() == 2
    }

    pub fn is_discrete(&self) -> bool {
        self.blocks.len() == self.n_states
    }

    /// Index of the block holding `state`.
    pub fn block_index(&self, state: usize) -> usize {
        self.blocks
            .iter()
            .position(|b| b.contains(state))
            .expect("partition blocks cover every state")
    }

    /// The realized event: the block containing `state`.
    pub fn realized_event(&self, state: usize) -> Event {
        self.blocks[self.block_index(state)]
    }

    /// Block index per state.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| self.block_index(s)).collect()
    }

    /// True iff every block of `self` is a union of blocks of `finer`.
    pub fn is_coarser(&self, finer: &Partition) -> Result<bool> {
        check_same(self, finer)?;
        Ok(finer
            .blocks
            .iter()
            .all(|q| self.blocks.iter().any(|p| q.is_subset_of(*p))))
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.blocks.iter()).finish()
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

fn check_same(a: &Partition, b: &Partition) -> Result<()> {
    if a.n_states != b.n_states {
        Err(PartitionError::Mismatch(a.n_states, b.n_states))
    } else {
        Ok(())
    }
}

/// Nonempty pairwise intersections of two block lists.
pub(crate) fn refine_blocks(blocks: &[Event], by: &[Event]) -> Vec<Event> {
    let mut out = Vec::with_capacity(blocks.len() * by.len());
    for a in blocks {
        for b in by {
            let c = a.intersect(*b);
            if !c.is_empty() {
                out.push(c);
            }
        }
    }
    out.sort_by_key(|b| b.first());
    out
}

/// Coarsest common refinement of `ps`.
pub fn join(ps: &[Partition]) -> Result<Partition> {
    let (first, rest) = ps.split_first().ok_or(PartitionError::NoSources)?;
    let mut blocks = first.blocks.clone();
    for p in rest {
        check_same(first, p)?;
        blocks = refine_blocks(&blocks, &p.blocks);
    }
    if blocks.len() < 2 {
        return Err(PartitionError::Degenerate);
    }
    Ok(Partition::canonical(first.n_states, blocks))
}

/// True iff `s` generates the same sigma-algebra as `p`.
pub fn sigma_equal(s: &[Partition], p: &Partition) -> Result<bool> {
    if let Some(q) = s.iter().find(|q| q.n_states != p.n_states) {
        return Err(PartitionError::Mismatch(q.n_states, p.n_states));
    }
    Ok(join(s)? == *p)
}

/// All binary partitions of an `n`-state space, ordered by the mask of the
/// block holding state 0.
pub fn enumerate_binary_partitions(space: &StateSpace) -> Result<Vec<Partition>> {
    let n = space.len();
    if n > MAX_ENUMERATION_STATES {
        return Err(PartitionError::TooLargeForEnumeration(n));
    }
    if n < 2 {
        return Ok(Vec::new());
    }
    let count = (1u64 << (n - 1)) - 1;
    (0..count)
        .map(|m| Partition::binary(n, Event(1 | (m << 1))))
        .collect()
}

/// A binary partition paired with the multiplier that prices its entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoSource {
    partition: Partition,
    multiplier: f64,
}

impl InfoSource {
    pub fn new(partition: Partition, multiplier: f64) -> Result<Self> {
        if !partition.is_binary() {
            return Err(PartitionError::InvalidPartition(format!(
                "information sources must be binary, got {} blocks",
                partition.len()
            )));
        }
        if !(multiplier > 0.0 && multiplier.is_finite()) {
            return Err(PartitionError::NonPositiveMultiplier(multiplier));
        }
        Ok(Self {
            partition,
            multiplier,
        })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub multiplier: f64,
    pub partition: Partition,
}

/// Layers ordered by strictly increasing multiplier whose joint refinement
/// is the discrete partition, with no redundant trailing layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredStructure {
    layers: Vec<Layer>,
}

impl LayeredStructure {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| PartitionError::InvalidLayers("no layers".into()))?;
        let n = first.partition.n_states();
        let mut blocks = vec![Event::full(n)];
        for (i, layer) in layers.iter().enumerate() {
            if !(layer.multiplier > 0.0 && layer.multiplier.is_finite()) {
                return Err(PartitionError::NonPositiveMultiplier(layer.multiplier));
            }
            check_same(&first.partition, &layer.partition)?;
            if i > 0 && layer.multiplier <= layers[i - 1].multiplier {
                return Err(PartitionError::InvalidLayers(
                    "multipliers must be strictly increasing".into(),
                ));
            }
            if blocks.len() == n {
                return Err(PartitionError::InvalidLayers(format!(
                    "layer {} is redundant: earlier layers already reveal the state",
                    i + 1
                )));
            }
            blocks = refine_blocks(&blocks, layer.partition.blocks());
        }
        if blocks.len() != n {
            return Err(PartitionError::NotGenerating {
                coarsest: Partition::canonical(n, blocks),
            });
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers, `M`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn n_states(&self) -> usize {
        self.layers[0].partition.n_states()
    }

    pub fn multipliers(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.multiplier).collect()
    }

    pub fn top_multiplier(&self) -> f64 {
        self.layers[self.layers.len() - 1].multiplier
    }

    /// Cumulative refinements: entry `k` is the join of layers `1..=k`, with
    /// entry 0 the one-block cover. Returns `M + 1` block lists; the last is
    /// the discrete partition.
    pub fn refinement_chain(&self) -> Vec<Vec<Event>> {
        let mut chain = Vec::with_capacity(self.layers.len() + 1);
        let mut blocks = vec![Event::full(self.n_states())];
        chain.push(blocks.clone());
        for layer in &self.layers {
            blocks = refine_blocks(&blocks, layer.partition.blocks());
            chain.push(blocks.clone());
        }
        chain
    }

    /// Weights on the log of each cumulative level's choice probability in
    /// the optimal choice rule: `λ1/λM`, then `(λk+1 − λk)/λM`. They sum to 1.
    pub fn level_weights(&self) -> Vec<f64> {
        let top = self.top_multiplier();
        let mut w = Vec::with_capacity(self.layers.len());
        let mut prev = 0.0;
        for layer in &self.layers {
            w.push((layer.multiplier - prev) / top);
            prev = layer.multiplier;
        }
        w
    }
}

/// Builds the layer sequence, returning sources that were never needed.
pub fn build_layers_with_report(
    sources: &[InfoSource],
) -> Result<(LayeredStructure, Vec<InfoSource>)> {
    let first = sources.first().ok_or(PartitionError::NoSources)?;
    let n = first.partition.n_states();
    for s in sources {
        check_same(&first.partition, &s.partition)?;
        if !(s.multiplier > 0.0 && s.multiplier.is_finite()) {
            return Err(PartitionError::NonPositiveMultiplier(s.multiplier));
        }
    }

    let mut order: Vec<&InfoSource> = sources.iter().collect();
    order.sort_by(|a, b| a.multiplier.total_cmp(&b.multiplier));

    let mut groups: Vec<(f64, Vec<&InfoSource>)> = Vec::new();
    for s in order {
        match groups.last_mut() {
            Some((lambda, members))
                if s.multiplier - *lambda
                    <= MULTIPLIER_MERGE_TOLERANCE * s.multiplier.abs().max(lambda.abs()) =>
            {
                members.push(s)
            }
            _ => groups.push((s.multiplier, vec![s])),
        }
    }

    let mut layers = Vec::new();
    let mut blocks = vec![Event::full(n)];
    let mut used = 0;
    for (lambda, members) in &groups {
        let parts: Vec<Partition> = members.iter().map(|s| s.partition.clone()).collect();
        let partition = join(&parts)?;
        blocks = refine_blocks(&blocks, partition.blocks());
        layers.push(Layer {
            multiplier: *lambda,
            partition,
        });
        used += 1;
        if blocks.len() == n {
            break;
        }
    }
    if blocks.len() != n {
        return Err(PartitionError::NotGenerating {
            coarsest: Partition::canonical(n, blocks),
        });
    }
    let discarded = groups[used..]
        .iter()
        .flat_map(|(_, m)| m.iter().map(|s| (*s).clone()))
        .collect();
    Ok((LayeredStructure { layers }, discarded))
}

/// Groups sources by multiplier into the layer sequence; sources priced
/// above the last needed layer are dropped.
pub fn build_layers(sources: &[InfoSource]) -> Result<LayeredStructure> {
    build_layers_with_report(sources).map(|(l, _)| l)
}
