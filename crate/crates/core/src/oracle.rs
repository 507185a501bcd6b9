//! Brute-force reference computations for small instances.
//!
//! Nothing here calls into the entropy or solver code paths it is used to
//! check: cell membership, aggregation, entropies and the choice rule are all
//! recomputed from state labels with plain loops.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::info::Distribution;
use crate::partition::{InfoSource, LayeredStructure};
use crate::problem::ChoiceProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance exceeds oracle caps: {0}")]
    CapExceeded(String),
    #[error("invalid oracle configuration: {0}")]
    Config(String),
    #[error("sources do not reveal the state")]
    NotGenerating,
    #[error("point is within 10 steps of the simplex boundary at coordinate {0}")]
    NearBoundary(usize),
}

pub type Result<T> = std::result::Result<T, OracleError>;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub grid_step: f64,
    pub max_states: usize,
    pub max_options: usize,
    pub max_sources: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_step: 1e-3,
            max_states: 4,
            max_options: 3,
            max_sources: 3,
        }
    }
}

/// Largest grid the coarse search may visit before its step is widened.
const MAX_GRID_POINTS: u64 = 1_000_000;
/// Final step of the local refinement after the grid search.
const REFINE_FLOOR: f64 = 1e-8;
/// Largest free dimension `grid_solve` accepts.
pub const MAX_FREE_DIMS: usize = 4;

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step <= 0.1) {
            return Err(OracleError::Config(format!(
                "grid_step {} outside (0, 0.1]",
                self.grid_step
            )));
        }
        if self.max_states > 4 || self.max_options > 3 || self.max_sources > 3 {
            return Err(OracleError::Config("caps may not exceed 4 states, 3 options, 3 sources".into()));
        }
        Ok(())
    }

    fn check_problem(&self, problem: &ChoiceProblem) -> Result<()> {
        self.validate()?;
        if problem.n_states() > self.max_states {
            return Err(OracleError::CapExceeded(format!(
                "{} states (max {})",
                problem.n_states(),
                self.max_states
            )));
        }
        if problem.n_options() > self.max_options {
            return Err(OracleError::CapExceeded(format!(
                "{} options (max {})",
                problem.n_options(),
                self.max_options
            )));
        }
        Ok(())
    }
}

fn entropy_of(masses: impl Iterator<Item = f64>) -> f64 {
    masses.filter(|m| *m > 0.0).map(|m| -m * m.ln()).sum()
}

/// Expected entropy of `labels` within groups sharing `known`.
fn conditional_entropy_labels(labels: &[usize], known: &[u64], mu: &[f64]) -> f64 {
    let mut groups: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
    for s in 0..mu.len() {
        *groups.entry(known[s]).or_default().entry(labels[s]).or_default() += mu[s];
    }
    groups
        .values()
        .map(|cells| {
            let total: f64 = cells.values().sum();
            if total <= 0.0 {
                0.0
            } else {
                total * entropy_of(cells.values().map(|m| m / total))
            }
        })
        .sum()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Cheapest ordered subset of `sources` that reveals the state: every
/// ordering of every generating subset is priced step by step.
/// Returns the cost and the source indices of a cheapest strategy.
pub fn min_strategy_cost(
    sources: &[InfoSource],
    mu: &Distribution,
    config: &OracleConfig,
) -> Result<(f64, Vec<usize>)> {
    config.validate()?;
    if sources.is_empty() {
        return Err(OracleError::NotGenerating);
    }
    if sources.len() > config.max_sources {
        return Err(OracleError::CapExceeded(format!(
            "{} sources (max {})",
            sources.len(),
            config.max_sources
        )));
    }
    let n = mu.len();
    if n > config.max_states {
        return Err(OracleError::CapExceeded(format!("{n} states (max {})", config.max_states)));
    }
    let labels: Vec<Vec<usize>> = sources
        .iter()
        .map(|s| (0..n).map(|w| usize::from(!s.partition().blocks()[0].contains(w))).collect())
        .collect();
    let mu = mu.probs();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for subset in 1u32..(1 << sources.len()) {
        // cheapest-first orderings are enumerated first and win exact ties
        let mut members: Vec<usize> = (0..sources.len()).filter(|i| subset & (1 << i) != 0).collect();
        members.sort_by(|&a, &b| sources[a].multiplier().total_cmp(&sources[b].multiplier()));
        let codes: Vec<u64> = (0..n)
            .map(|w| members.iter().fold(0u64, |c, &i| (c << 1) | labels[i][w] as u64))
            .collect();
        let mut distinct = codes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() != n {
            continue;
        }
        for order in permutations(&members) {
            let mut known = vec![0u64; n];
            let mut cost = 0.0;
            for &i in &order {
                cost += sources[i].multiplier() * conditional_entropy_labels(&labels[i], &known, mu);
                for w in 0..n {
                    known[w] = (known[w] << 1) | labels[i][w] as u64;
                }
            }
            if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-13 * c.abs().max(1.0)) {
                best = Some((cost, order));
            }
        }
    }
    best.ok_or(OracleError::NotGenerating)
}

/// Label of each state at each refinement level, found by intersecting
/// layer blocks state by state.
struct Levels {
    /// `label[k][ω]` for `k = 0..M` (0: everything in one cell).
    label: Vec<Vec<usize>>,
    deep_count: usize,
    lambdas: Vec<f64>,
}

impl Levels {
    fn new(layers: &LayeredStructure) -> Self {
        let n = layers.n_states();
        let m = layers.depth();
        let mut label = vec![vec![0usize; n]];
        let mut signature: Vec<Vec<usize>> = vec![Vec::new(); n];
        for layer in &layers.layers()[..m - 1] {
            for (w, sig) in signature.iter_mut().enumerate() {
                let b = layer.partition.blocks().iter().position(|b| b.contains(w)).unwrap();
                sig.push(b);
            }
            // number cells in order of their lowest state
            let mut seen: Vec<&Vec<usize>> = Vec::new();
            let row = (0..n)
                .map(|w| match seen.iter().position(|s| **s == signature[w]) {
                    Some(i) => i,
                    None => {
                        seen.push(&signature[w]);
                        seen.len() - 1
                    }
                })
                .collect();
            label.push(row);
        }
        let deep_count = label.last().unwrap().iter().max().unwrap() + 1;
        Self {
            label,
            deep_count,
            lambdas: layers.multipliers(),
        }
    }

    fn deep(&self, w: usize) -> usize {
        self.label[self.label.len() - 1][w]
    }
}

/// Direct evaluation of the reduced objective at free variables
/// `x[b][n]`.
fn reduced_objective(problem: &ChoiceProblem, levels: &Levels, x: &[Vec<f64>]) -> f64 {
    let mu = problem.prior().probs();
    let n_states = mu.len();
    let n_opt = problem.n_options();
    let m = levels.lambdas.len();
    let top = levels.lambdas[m - 1];
    let mut total = 0.0;
    for w in 0..n_states {
        if mu[w] <= 0.0 {
            continue;
        }
        let vmax = (0..n_opt).map(|n| problem.payoff(n, w)).fold(f64::NEG_INFINITY, f64::max);
        let mut inner = 0.0;
        for n in 0..n_opt {
            let mut term = ((problem.payoff(n, w) - vmax) / top).exp();
            for k in 0..m {
                let exponent = if k == 0 {
                    levels.lambdas[0] / top
                } else {
                    (levels.lambdas[k] - levels.lambdas[k - 1]) / top
                };
                let (mut num, mut den) = (0.0, 0.0);
                for u in 0..n_states {
                    if levels.label[k][u] == levels.label[k][w] {
                        num += mu[u] * x[levels.deep(u)][n];
                        den += mu[u];
                    }
                }
                term *= (num / den).powf(exponent);
            }
            inner += term;
        }
        total += mu[w] * (inner.ln() + vmax / top);
    }
    top * total
}

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Exhaustive grid search over the free simplices followed by pairwise
/// mass-transfer refinement. Returns the best objective and free variables
/// (`x[b][n]`, deep cells ordered by lowest state).
pub fn grid_solve(problem: &ChoiceProblem, config: &OracleConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    config.check_problem(problem)?;
    let levels = Levels::new(problem.layers());
    let cells = levels.deep_count;
    let n_opt = problem.n_options();
    let dims = cells * (n_opt - 1);
    if dims > MAX_FREE_DIMS {
        return Err(OracleError::CapExceeded(format!(
            "{dims} free dimensions (max {MAX_FREE_DIMS})"
        )));
    }

    let candidates = [1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1];
    let step = candidates
        .iter()
        .copied()
        .filter(|h| *h >= config.grid_step - 1e-15)
        .find(|h| {
            let k = (1.0 / h).round() as u64;
            binomial(k + n_opt as u64 - 1, n_opt as u64 - 1).saturating_pow(cells as u32) <= MAX_GRID_POINTS
        })
        .unwrap_or(0.1);
    let k = (1.0 / step).round() as u32;
    let per_cell = compositions(k, n_opt);

    // best grid point overall and best with every entry positive: the
    // objective is only smooth off the boundary, where local moves can
    // stall, so refinement also starts from the interior
    let mut best = (f64::NEG_INFINITY, vec![0usize; cells]);
    let mut best_inner = (f64::NEG_INFINITY, vec![0usize; cells]);
    let mut idx = vec![0usize; cells];
    let mut x = vec![vec![0.0; n_opt]; cells];
    'grid: loop {
        set_grid_point(&mut x, &idx, &per_cell, k);
        let v = reduced_objective(problem, &levels, &x);
        if v > best.0 {
            best = (v, idx.clone());
        }
        if v > best_inner.0 && x.iter().flatten().all(|&p| p > 0.0) {
            best_inner = (v, idx.clone());
        }
        for pos in 0..cells {
            idx[pos] += 1;
            if idx[pos] < per_cell.len() {
                continue 'grid;
            }
            idx[pos] = 0;
        }
        break;
    }

    let mut result: Option<(f64, Vec<Vec<f64>>)> = None;
    for (v, start) in [best, best_inner] {
        if !v.is_finite() {
            continue;
        }
        set_grid_point(&mut x, &start, &per_cell, k);
        let v = refine(problem, &levels, &mut x, v, step / 10.0);
        if result.as_ref().is_none_or(|r| v > r.0) {
            result = Some((v, x.clone()));
        }
    }
    result.ok_or_else(|| OracleError::Config("no finite grid point".into()))
}

fn set_grid_point(x: &mut [Vec<f64>], idx: &[usize], per_cell: &[Vec<u32>], k: u32) {
    for (b, &i) in idx.iter().enumerate() {
        for (n, &c) in per_cell[i].iter().enumerate() {
            x[b][n] = c as f64 / k as f64;
        }
    }
}

/// Pairwise mass transfers within each cell, with the step shrinking by 10
/// down to the refinement floor. Entries are halved rather than emptied.
fn refine(problem: &ChoiceProblem, levels: &Levels, x: &mut [Vec<f64>], mut best: f64, mut delta: f64) -> f64 {
    let n_opt = problem.n_options();
    while delta >= REFINE_FLOOR {
        loop {
            let mut improved = false;
            for b in 0..x.len() {
                for from in 0..n_opt {
                    for to in 0..n_opt {
                        if from == to || x[b][from] <= 0.0 {
                            continue;
                        }
                        let moved = if x[b][from] > delta { delta } else { x[b][from] / 2.0 };
                        x[b][from] -= moved;
                        x[b][to] += moved;
                        let v = reduced_objective(problem, levels, x);
                        if v > best {
                            best = v;
                            improved = true;
                        } else {
                            x[b][from] += moved;
                            x[b][to] -= moved;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        delta /= 10.0;
    }
    best
}

/// Expected payoff minus information cost for a full policy `p[ω][n]`,
/// computed directly from cell sums.
pub fn direct_value(problem: &ChoiceProblem, p: &[Vec<f64>]) -> f64 {
    let levels = Levels::new(problem.layers());
    direct_value_with(problem, &levels, p)
}

fn level_probs(levels: &Levels, mu: &[f64], p: &[Vec<f64>], k: usize, w: usize, n: usize) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for u in 0..mu.len() {
        if levels.label[k][u] == levels.label[k][w] {
            num += mu[u] * p[u][n];
            den += mu[u];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn direct_value_with(problem: &ChoiceProblem, levels: &Levels, p: &[Vec<f64>]) -> f64 {
    let mu = problem.prior().probs();
    let lam = &levels.lambdas;
    let m = lam.len();
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    let mut total = 0.0;
    for w in 0..mu.len() {
        if mu[w] <= 0.0 {
            continue;
        }
        let mut here = 0.0;
        for n in 0..problem.n_options() {
            here += problem.payoff(n, w) * p[w][n];
            for k in 0..m {
                let coef = if k == 0 { lam[0] } else { lam[k] - lam[k - 1] };
                here += coef * xlogx(level_probs(levels, mu, p, k, w, n));
            }
            here -= lam[m - 1] * xlogx(p[w][n]);
        }
        total += mu[w] * here;
    }
    total
}

const DIRECT_MAX_ITER: usize = 200_000;
const DIRECT_TOL: f64 = 1e-13;
const DIRECT_RESTARTS: usize = 3;

fn mirror_ascent(problem: &ChoiceProblem, levels: &Levels, mut p: Vec<Vec<f64>>) -> (f64, Vec<Vec<f64>>) {
    let mu = problem.prior().probs();
    let lam = &levels.lambdas;
    let m = lam.len();
    let top = lam[m - 1];
    let n_opt = problem.n_options();
    let mut value = direct_value_with(problem, levels, &p);
    let mut s = 1.0;
    for _ in 0..DIRECT_MAX_ITER {
        // target rule given the current aggregates
        let target: Vec<Vec<f64>> = (0..mu.len())
            .map(|w| {
                let score: Vec<f64> = (0..n_opt)
                    .map(|n| {
                        let mut sc = problem.payoff(n, w) / top;
                        for k in 0..m {
                            let coef = if k == 0 { lam[0] } else { lam[k] - lam[k - 1] };
                            let q = level_probs(levels, mu, &p, k, w, n);
                            sc += if q > 0.0 { coef / top * q.ln() } else { f64::NEG_INFINITY };
                        }
                        sc
                    })
                    .collect();
                let hi = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = score.iter().map(|v| (v - hi).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            })
            .collect();
        let mut accepted = None;
        while s > 1e-12 {
            let cand: Vec<Vec<f64>> = p
                .iter()
                .zip(&target)
                .map(|(row, t)| {
                    let mixed: Vec<f64> = row
                        .iter()
                        .zip(t)
                        .map(|(a, b)| if *a > 0.0 && *b > 0.0 { a.powf(1.0 - s) * b.powf(s) } else { 0.0 })
                        .collect();
                    let z: f64 = mixed.iter().sum();
                    if z > 0.0 {
                        mixed.into_iter().map(|v| v / z).collect()
                    } else {
                        row.clone()
                    }
                })
                .collect();
            let v = direct_value_with(problem, levels, &cand);
            if v >= value - 1e-15 * value.abs().max(1.0) {
                accepted = Some((v, cand));
                break;
            }
            s /= 2.0;
        }
        let Some((v, cand)) = accepted else { break };
        let change = p
            .iter()
            .zip(&cand)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        p = cand;
        value = v;
        s = (s * 2.0).min(1.0);
        if change < DIRECT_TOL {
            break;
        }
    }
    (value, p)
}

/// Maximizes expected payoff minus information cost over every
/// state-contingent policy `p[ω][n]`, ignoring the reduced form. Runs
/// multiplicative ascent from a uniform start and a few seeded random
/// starts, keeping the best.
pub fn direct_policy_solve(problem: &ChoiceProblem, config: &OracleConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    config.check_problem(problem)?;
    let levels = Levels::new(problem.layers());
    let n_states = problem.n_states();
    let n_opt = problem.n_options();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut starts = vec![vec![vec![1.0 / n_opt as f64; n_opt]; n_states]];
    for _ in 0..DIRECT_RESTARTS {
        starts.push(
            (0..n_states)
                .map(|_| {
                    let raw: Vec<f64> = (0..n_opt).map(|_| rng.gen_range(0.05..1.0)).collect();
                    let z: f64 = raw.iter().sum();
                    raw.into_iter().map(|v| v / z).collect()
                })
                .collect(),
        );
    }
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for start in starts {
        let (v, p) = mirror_ascent(problem, &levels, start);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, p));
        }
    }
    Ok(best.unwrap())
}

/// Removes the component of `g` along the all-ones direction of each block
/// of length `block_len`, leaving the part tangent to a product of simplices.
pub fn project_tangent(g: &[f64], block_len: usize) -> Vec<f64> {
    g.chunks(block_len)
        .flat_map(|block| {
            let mean = block.iter().sum::<f64>() / block.len() as f64;
            block.iter().map(move |v| v - mean)
        })
        .collect()
}

/// Central-difference gradient of `f` at `x`, projected onto the tangent
/// space of the product of simplices with blocks of length `block_len`.
/// Fails if any coordinate lies within `10 * step` of zero.
pub fn finite_diff_grad<F>(f: F, x: &[f64], step: f64, block_len: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) || block_len == 0 || !x.len().is_multiple_of(block_len) {
        return Err(OracleError::Config(format!(
            "step {step} with block length {block_len} for {} coordinates",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| *v < 10.0 * step) {
        return Err(OracleError::NearBoundary(i));
    }
    let mut probe = x.to_vec();
    let raw: Vec<f64> = (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect();
    Ok(project_tangent(&raw, block_len))
}

/// Relative distance between two gradients after projecting both onto the
/// simplex tangent space.
pub fn gradient_discrepancy(analytic: &[f64], numeric: &[f64], block_len: usize) -> f64 {
    let a = project_tangent(analytic, block_len);
    let b = project_tangent(numeric, block_len);
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}
