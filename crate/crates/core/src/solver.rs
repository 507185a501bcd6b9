//! Optimal choice under layered information costs.
//!
//! The agent's free variables are the choice probabilities on the cells of
//! the join of every layer except the most expensive one. Coarser choice
//! probabilities are prior-weighted averages of those, and state-level
//! choice probabilities follow from the choice rule
//!
//! ```text
//! Pr(n|ω) ∝ Pr(n)^{w0} · Π_k Pr(n | level-k cell of ω)^{wk} · exp(v_n(ω)/λM)
//! ```
//!
//! with `w0 = λ1/λM` and `wk = (λk+1 − λk)/λM`. The reduced objective
//! `λM · Σ_ω μ(ω) ln Σ_n (...)` is concave in the free variables and is
//! maximized over a product of simplices.
//!
//! Options whose unconditional probability falls below the prune threshold
//! leave the support. An option with small probability is also dropped
//! early when that does not lower the objective and no way of bringing it
//! back has a positive slope. A solution on a smaller support is accepted
//! only after each absent option has been checked the same way.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::info::{compensated_sum, policy_cost, InfoError};
use crate::partition::Event;
use crate::problem::{ChoiceProblem, LevelGeometry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("every option has zero probability in state {state}")]
    NoAdmissibleOption { state: usize },
    #[error("expected {expected} free variables, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("choice probabilities in cell {cell} are not a probability vector")]
    NotOnSimplex { cell: usize },
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error(transparent)]
    Info(#[from] InfoError),
}

pub type Result<T> = std::result::Result<T, SolveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Exponentiated-gradient ascent with a backtracking line search.
    ExponentiatedGradient,
    /// Damped re-aggregation of the choice rule.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    /// Stop once the sup-norm change of the free variables is below this.
    pub tol: f64,
    /// ... and the aggregation residual is below this.
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Step toward the re-aggregated choice probabilities in the fixed-point
    /// method.
    pub damping: f64,
    /// Options whose unconditional probability falls below this leave the
    /// support.
    pub prune_threshold: f64,
    /// Keep the objective value after every accepted iteration.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::ExponentiatedGradient,
            tol: 1e-10,
            residual_tol: 1e-8,
            max_iter: 100_000,
            damping: 0.5,
            prune_threshold: 1e-12,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.residual_tol > 0.0) {
            return Err(SolveError::Options("tolerances must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolveError::Options("damping must lie in (0, 1]".into()));
        }
        if self.max_iter == 0 {
            return Err(SolveError::Options("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Choice probabilities at every refinement level and in every state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    deep_cells: Vec<Event>,
    n_options: usize,
    /// `levels[k][c][n]`: probability of `n` given level-`k` cell `c`.
    levels: Vec<Vec<Vec<f64>>>,
    /// `state_probs[ω][n]`.
    state_probs: Vec<Vec<f64>>,
}

impl Policy {
    /// Applies the choice rule to free variables `x` (cell-major,
    /// `x[b * N + n]`).
    pub fn from_cells(problem: &ChoiceProblem, x: &[f64]) -> Result<Self> {
        check_cells(problem, x)?;
        let eval = evaluate(problem, x)?;
        Ok(Self {
            deep_cells: problem.deep_cells().to_vec(),
            n_options: problem.n_options(),
            levels: eval.levels,
            state_probs: eval.state_probs,
        })
    }

    /// Wraps an arbitrary state-contingent policy, deriving every coarser
    /// level by aggregation. Nothing forces it to obey the choice rule.
    pub fn from_state_probs(problem: &ChoiceProblem, state_probs: Vec<Vec<f64>>) -> Result<Self> {
        if state_probs.len() != problem.n_states()
            || state_probs.iter().any(|r| r.len() != problem.n_options())
        {
            return Err(SolveError::Shape {
                expected: problem.n_states() * problem.n_options(),
                got: state_probs.iter().map(Vec::len).sum(),
            });
        }
        let levels = aggregate_states(problem, &state_probs);
        Ok(Self {
            deep_cells: problem.deep_cells().to_vec(),
            n_options: problem.n_options(),
            levels,
            state_probs,
        })
    }

    pub fn deep_cells(&self) -> &[Event] {
        &self.deep_cells
    }

    /// Free variables, cell-major.
    pub fn cell_probs(&self) -> Vec<f64> {
        self.levels[self.levels.len() - 1].concat()
    }

    /// `Pr(n)`.
    pub fn unconditional(&self) -> &[f64] {
        &self.levels[0][0]
    }

    /// `Pr(n | cell)` at refinement level `level` (0 is the whole space).
    pub fn level_probs(&self, level: usize) -> &[Vec<f64>] {
        &self.levels[level]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn state_probs(&self) -> &[Vec<f64>] {
        &self.state_probs
    }

    pub fn prob(&self, option: usize, state: usize) -> f64 {
        self.state_probs[state][option]
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    /// Information cost of the state-level policy.
    pub fn cost(&self, problem: &ChoiceProblem) -> Result<f64> {
        Ok(policy_cost(&self.state_probs, problem.prior(), problem.layers())?)
    }

    /// Expected payoff minus information cost.
    pub fn value(&self, problem: &ChoiceProblem) -> Result<f64> {
        Ok(problem.expected_payoff(&self.state_probs) - self.cost(problem)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub policy: Policy,
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Options chosen with positive unconditional probability.
    pub support: Vec<usize>,
    pub converged: bool,
    pub method: Method,
    /// Objective after each accepted iteration, when requested; one list per
    /// run (the initial run, then each accepted option reintroduction, which
    /// restarts from a reseeded point).
    pub trace: Vec<Vec<f64>>,
}

struct Evaluation {
    levels: Vec<Vec<Vec<f64>>>,
    /// Prior-weighted average of the rule's state probabilities per level cell.
    rule_levels: Vec<Vec<Vec<f64>>>,
    state_probs: Vec<Vec<f64>>,
    /// `ln Σ_n (...)` of the choice rule per state.
    log_z: Vec<f64>,
    objective: f64,
}

fn check_cells(problem: &ChoiceProblem, x: &[f64]) -> Result<()> {
    let n = problem.n_options();
    if x.len() != problem.n_free() {
        return Err(SolveError::Shape {
            expected: problem.n_free(),
            got: x.len(),
        });
    }
    for (b, cell) in x.chunks(n).enumerate() {
        let total: f64 = cell.iter().sum();
        if cell.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(SolveError::NotOnSimplex { cell: b });
        }
    }
    Ok(())
}

/// Level aggregates implied by free variables `x`. Zero-mass cells inherit
/// their parent cell's probabilities.
fn aggregate_cells(geo: &LevelGeometry, x: &[f64], n_options: usize) -> Vec<Vec<Vec<f64>>> {
    let depth = geo.depth();
    let deep_mass = geo.deep_mass();
    let mut levels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(depth);
    for k in 0..depth {
        let n_cells = geo.cells[k].len();
        let mut acc = vec![vec![0.0; n_options]; n_cells];
        if k == depth - 1 {
            for (b, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&x[b * n_options..(b + 1) * n_options]);
            }
        } else {
            for (b, &m) in deep_mass.iter().enumerate() {
                let c = geo.deep_ancestor[k][b];
                for n in 0..n_options {
                    acc[c][n] += x[b * n_options + n] * m;
                }
            }
            for (c, row) in acc.iter_mut().enumerate() {
                let m = geo.mass[k][c];
                if m > 0.0 {
                    row.iter_mut().for_each(|v| *v /= m);
                }
            }
        }
        for c in 0..n_cells {
            if geo.mass[k][c] <= 0.0 && k > 0 {
                acc[c] = levels[k - 1][geo.parent[k][c]].clone();
            }
        }
        levels.push(acc);
    }
    levels
}

fn aggregate_states(problem: &ChoiceProblem, probs: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let geo = problem.geometry();
    let n = problem.n_options();
    let mu = problem.prior();
    let mut levels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(geo.depth());
    for k in 0..geo.depth() {
        let mut lvl = crate::info::aggregate_over(&geo.cells[k], probs, mu, n);
        for (c, entry) in lvl.iter_mut().enumerate() {
            if entry.is_none() {
                *entry = Some(if k == 0 {
                    vec![1.0 / n as f64; n]
                } else {
                    levels[k - 1][geo.parent[k][c]].clone()
                });
            }
        }
        levels.push(lvl.into_iter().map(Option::unwrap).collect());
    }
    levels
}

/// Log-domain choice rule; returns state probabilities and `ln Σ_n (...)`
/// per state.
fn choice_rule(
    problem: &ChoiceProblem,
    levels: &[Vec<Vec<f64>>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let geo = problem.geometry();
    let n_options = problem.n_options();
    let top = geo.top_multiplier;
    let mut probs = Vec::with_capacity(problem.n_states());
    let mut log_z = Vec::with_capacity(problem.n_states());
    let mut scores = vec![0.0; n_options];
    for s in 0..problem.n_states() {
        for (n, score) in scores.iter_mut().enumerate() {
            let mut acc = problem.payoff(n, s) / top;
            for (k, w) in geo.weights.iter().enumerate() {
                let a = levels[k][geo.cell_of_state[k][s]][n];
                if a > 0.0 {
                    acc += w * a.ln();
                } else {
                    acc = f64::NEG_INFINITY;
                    break;
                }
            }
            *score = acc;
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(SolveError::NoAdmissibleOption { state: s });
        }
        let weights: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        probs.push(weights.iter().map(|w| w / total).collect());
        log_z.push(max + total.ln());
    }
    Ok((probs, log_z))
}

fn evaluate(problem: &ChoiceProblem, x: &[f64]) -> Result<Evaluation> {
    let geo = problem.geometry();
    let n = problem.n_options();
    let levels = aggregate_cells(geo, x, n);
    let (state_probs, log_z) = choice_rule(problem, &levels)?;
    let mu = problem.prior();
    let objective = geo.top_multiplier
        * compensated_sum(log_z.iter().enumerate().map(|(s, z)| {
            let m = mu.prob(s);
            if m > 0.0 {
                m * z
            } else {
                0.0
            }
        }));

    let mut rule_levels = Vec::with_capacity(geo.depth());
    for k in 0..geo.depth() {
        let mut acc = vec![vec![0.0; n]; geo.cells[k].len()];
        for s in 0..problem.n_states() {
            let c = geo.cell_of_state[k][s];
            for i in 0..n {
                acc[c][i] += mu.prob(s) * state_probs[s][i];
            }
        }
        for (c, row) in acc.iter_mut().enumerate() {
            let m = geo.mass[k][c];
            if m > 0.0 {
                row.iter_mut().for_each(|v| *v /= m);
            } else {
                row.copy_from_slice(&levels[k][c]);
            }
        }
        rule_levels.push(acc);
    }
    Ok(Evaluation {
        levels,
        rule_levels,
        state_probs,
        log_z,
        objective,
    })
}

/// State-level choice probabilities from the choice rule applied to given
/// level aggregates (`aggregates[k][cell][n]`, level 0 holding `Pr(n)`).
pub fn state_choice_probs(
    problem: &ChoiceProblem,
    aggregates: &[Vec<Vec<f64>>],
) -> Result<Vec<Vec<f64>>> {
    let geo = problem.geometry();
    let shape_ok = aggregates.len() == geo.depth()
        && aggregates
            .iter()
            .zip(&geo.cells)
            .all(|(a, c)| a.len() == c.len() && a.iter().all(|r| r.len() == problem.n_options()));
    if !shape_ok {
        return Err(SolveError::Shape {
            expected: geo.cells.iter().map(Vec::len).sum::<usize>() * problem.n_options(),
            got: aggregates.iter().flatten().map(Vec::len).sum(),
        });
    }
    choice_rule(problem, aggregates).map(|(p, _)| p)
}

/// Reduced objective at free variables `x`, in payoff units.
pub fn corollary_objective(problem: &ChoiceProblem, x: &[f64]) -> Result<f64> {
    check_cells(problem, x)?;
    Ok(evaluate(problem, x)?.objective)
}

/// Gradient of the reduced objective with respect to `x`, treating every
/// entry of `x` as an independent coordinate.
pub fn corollary_gradient(problem: &ChoiceProblem, x: &[f64]) -> Result<Vec<f64>> {
    check_cells(problem, x)?;
    let eval = evaluate(problem, x)?;
    Ok(gradient(problem, &eval))
}

fn gradient(problem: &ChoiceProblem, eval: &Evaluation) -> Vec<f64> {
    let geo = problem.geometry();
    let n = problem.n_options();
    let deep_mass = geo.deep_mass();
    let mut g = vec![0.0; deep_mass.len() * n];
    for (b, &m) in deep_mass.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (k, w) in geo.weights.iter().enumerate() {
                let c = geo.deep_ancestor[k][b];
                let a = eval.levels[k][c][i];
                if a > 0.0 {
                    acc += w * eval.rule_levels[k][c][i] / a;
                }
            }
            g[b * n + i] = geo.top_multiplier * m * acc;
        }
    }
    g
}

/// How far a policy is from being a fixed point of the choice rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointReport {
    /// Max over `(n, ω)` of `|Pr(n|ω) − rule(aggregates of Pr)(n|ω)|`.
    pub rule_residual: f64,
    /// Max gap between the policy's stored level probabilities and the
    /// aggregates of its state probabilities.
    pub aggregation_residual: f64,
}

impl FixedPointReport {
    pub fn max(&self) -> f64 {
        self.rule_residual.max(self.aggregation_residual)
    }
}

pub fn verify_fixed_point(policy: &Policy, problem: &ChoiceProblem) -> Result<FixedPointReport> {
    let recomputed = aggregate_states(problem, &policy.state_probs);
    let rule = state_choice_probs(problem, &recomputed)?;
    let rule_residual = max_gap(
        policy.state_probs.iter().flatten(),
        rule.iter().flatten(),
    );
    let aggregation_residual = max_gap(
        policy.levels.iter().flatten().flatten(),
        recomputed.iter().flatten().flatten(),
    );
    Ok(FixedPointReport {
        rule_residual,
        aggregation_residual,
    })
}

fn max_gap<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Run {
    x: Vec<f64>,
    support: BTreeSet<usize>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn deep_residual(problem: &ChoiceProblem, eval: &Evaluation) -> f64 {
    let geo = problem.geometry();
    let d = geo.depth() - 1;
    max_gap(
        eval.levels[d].iter().flatten(),
        eval.rule_levels[d].iter().flatten(),
    )
}

/// Unconditional probability below which dropping an option is tried.
const DROP_TRIAL: f64 = 0.05;
/// One-sided slope of the objective above which an absent option is
/// worth bringing back.
const REENTRY_SLOPE: f64 = 1e-10;
/// Iteration cap when searching for the best entry profile.
const REENTRY_ITERATIONS: usize = 300;

fn noise_floor(v: f64) -> f64 {
    1e-14 * v.abs().max(1.0)
}

fn eg_candidate(
    x: &[f64],
    scaled_grad: &[f64],
    eta: f64,
    n: usize,
    deep_mass: &[f64],
) -> Vec<f64> {
    let mut out = x.to_vec();
    for (b, &m) in deep_mass.iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        let cell = &x[b * n..(b + 1) * n];
        let g = &scaled_grad[b * n..(b + 1) * n];
        let logs: Vec<f64> = (0..n)
            .map(|i| {
                if cell[i] > 0.0 {
                    cell[i].ln() + eta * g[i]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        for i in 0..n {
            out[b * n + i] = w[i] / total;
        }
    }
    out
}

/// Best one-sided slope of the objective when an absent `option` enters
/// with share `ε·c_b` of each deep cell `b`, over profiles `c` on the
/// simplex of cells with positive mass, and the maximizing profile.
///
/// Taking mass from the other options costs `Σ_b c_b Σ_n x_bn g_bn`. The
/// entering option adds `λM Σ_ω μ(ω) e^{v/λM} Π_k c̄_k^{w_k} / Z(ω)`, where
/// `c̄_k` is the mass-weighted mean of `c` over the level-k cell of `ω`; that
/// geometric mean is concave in `c`, so the slope is maximized by
/// exponentiated gradient.
fn reentry_slope(problem: &ChoiceProblem, x: &[f64], eval: &Evaluation, option: usize) -> (f64, Vec<f64>) {
    let geo = problem.geometry();
    let n = problem.n_options();
    let top = geo.top_multiplier;
    let mu = problem.prior();
    let deep_mass = geo.deep_mass();
    let g = gradient(problem, eval);
    let cost: Vec<f64> = (0..deep_mass.len())
        .map(|b| (0..n).filter(|&i| i != option).map(|i| x[b * n + i] * g[b * n + i]).sum())
        .collect();
    let gain: Vec<f64> = (0..problem.n_states())
        .map(|s| {
            let m = mu.prob(s);
            if m > 0.0 {
                m * (problem.payoff(option, s) / top - eval.log_z[s]).exp()
            } else {
                0.0
            }
        })
        .collect();

    let value_and_grad = |c: &[f64]| {
        let means: Vec<Vec<f64>> = (0..geo.depth())
            .map(|k| {
                let mut acc = vec![0.0; geo.cells[k].len()];
                for (b, &m) in deep_mass.iter().enumerate() {
                    acc[geo.deep_ancestor[k][b]] += m * c[b];
                }
                acc.iter().zip(&geo.mass[k]).map(|(a, &m)| if m > 0.0 { a / m } else { 0.0 }).collect()
            })
            .collect();
        // pull[k][cell]: gain-weighted w_k / (mass · mean) summed over states
        let mut pull: Vec<Vec<f64>> = geo.cells.iter().map(|l| vec![0.0; l.len()]).collect();
        let mut value = 0.0;
        for (s, &q) in gain.iter().enumerate() {
            if q <= 0.0 {
                continue;
            }
            let mut log_g = 0.0;
            for (k, w) in geo.weights.iter().enumerate() {
                let cbar = means[k][geo.cell_of_state[k][s]];
                log_g = if cbar > 0.0 { log_g + w * cbar.ln() } else { f64::NEG_INFINITY };
            }
            let qg = q * log_g.exp();
            value += qg;
            if qg > 0.0 {
                for (k, w) in geo.weights.iter().enumerate() {
                    let cell = geo.cell_of_state[k][s];
                    pull[k][cell] += qg * w / (geo.mass[k][cell] * means[k][cell]);
                }
            }
        }
        let value = top * value - c.iter().zip(&cost).map(|(a, b)| a * b).sum::<f64>();
        let grad: Vec<f64> = deep_mass
            .iter()
            .enumerate()
            .map(|(b, &m)| {
                if m <= 0.0 {
                    return 0.0;
                }
                let p: f64 = (0..geo.depth()).map(|k| pull[k][geo.deep_ancestor[k][b]]).sum();
                top * m * p - cost[b]
            })
            .collect();
        (value, grad)
    };

    let active = deep_mass.iter().filter(|&&m| m > 0.0).count();
    let mut c: Vec<f64> = deep_mass.iter().map(|&m| if m > 0.0 { 1.0 / active as f64 } else { 0.0 }).collect();
    let (mut value, mut grad) = value_and_grad(&c);
    let mut eta = 1.0;
    for _ in 0..REENTRY_ITERATIONS {
        if active == 1 {
            break;
        }
        let scale = grad.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        let logs: Vec<f64> = c
            .iter()
            .zip(&grad)
            .map(|(&ci, &gi)| if ci > 0.0 { ci.ln() + eta * gi / scale } else { f64::NEG_INFINITY })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = w.iter().sum();
        let cand: Vec<f64> = w.iter().map(|v| v / total).collect();
        let (cv, cg) = value_and_grad(&cand);
        if cv > value {
            c = cand;
            value = cv;
            grad = cg;
            eta = (eta * 2.0).min(1e3);
        } else {
            eta /= 2.0;
            if eta < 1e-12 {
                break;
            }
        }
    }
    (value, c)
}

/// Moves share `eps[b]` of cell `b` onto `option`.
fn reseeded(x: &[f64], n: usize, option: usize, eps: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = x.to_vec();
    for (b, cell) in out.chunks_mut(n).enumerate() {
        let e = eps(b);
        cell.iter_mut().for_each(|v| *v *= 1.0 - e);
        cell[option] += e;
    }
    out
}

fn prune(x: &mut [f64], n: usize, option: usize, support: &BTreeSet<usize>) {
    for cell in x.chunks_mut(n) {
        cell[option] = 0.0;
        let total: f64 = cell.iter().sum();
        if total > 0.0 {
            cell.iter_mut().for_each(|v| *v /= total);
        } else {
            for &i in support {
                cell[i] = 1.0 / support.len() as f64;
            }
        }
    }
}

/// Exponentiated-gradient step with backtracking; `eta` carries the step
/// size between iterations.
fn eg_step(
    problem: &ChoiceProblem,
    x: &[f64],
    eval: &Evaluation,
    eta: &mut f64,
) -> Result<Option<(Vec<f64>, Evaluation)>> {
    let geo = problem.geometry();
    let n = problem.n_options();
    let deep_mass = geo.deep_mass();
    let f = eval.objective;
    let grad = gradient(problem, eval);
    let scaled: Vec<f64> = grad
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let m = deep_mass[j / n];
            if m > 0.0 {
                g / (geo.top_multiplier * m)
            } else {
                0.0
            }
        })
        .collect();
    while *eta > 1e-30 {
        let cand = eg_candidate(x, &scaled, *eta, n, deep_mass);
        let ce = evaluate(problem, &cand)?;
        let dir: f64 = grad.iter().zip(cand.iter().zip(x)).map(|(g, (c, o))| g * (c - o)).sum();
        // Once objective differences drop to rounding level the sufficient
        // increase test passes or fails on noise; decide by the slope at the
        // candidate instead: a step that has not passed the maximum along its
        // direction is accepted.
        let unresolved = (ce.objective - f).abs() <= 100.0 * noise_floor(f);
        let accept = if unresolved {
            let gc = gradient(problem, &ce);
            gc.iter().zip(cand.iter().zip(x)).map(|(g, (c, o))| g * (c - o)).sum::<f64>() >= 0.0
        } else {
            ce.objective >= f + 1e-4 * dir
        };
        if ce.objective.is_finite() && accept {
            *eta = (*eta * 2.0).min(1e8);
            return Ok(Some((cand, ce)));
        }
        *eta *= 0.5;
    }
    Ok(None)
}

/// Damped move toward the re-aggregated choice probabilities, halving the
/// damping until the objective does not fall.
fn fixed_point_step(
    problem: &ChoiceProblem,
    x: &[f64],
    eval: &Evaluation,
    damping: f64,
) -> Result<Option<(Vec<f64>, Evaluation)>> {
    let geo = problem.geometry();
    let n = problem.n_options();
    let d = geo.depth() - 1;
    let mut step = damping;
    while step > 1e-12 {
        let mut cand = x.to_vec();
        for (b, &m) in geo.deep_mass().iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            for i in 0..n {
                let j = b * n + i;
                cand[j] = (1.0 - step) * x[j] + step * eval.rule_levels[d][b][i];
            }
        }
        let ce = evaluate(problem, &cand)?;
        if ce.objective.is_finite() && ce.objective >= eval.objective - noise_floor(eval.objective) {
            return Ok(Some((cand, ce)));
        }
        step *= 0.5;
    }
    Ok(None)
}

fn run_from(
    problem: &ChoiceProblem,
    mut x: Vec<f64>,
    mut support: BTreeSet<usize>,
    opts: &SolverOptions,
    budget: usize,
) -> Result<Run> {
    let n = problem.n_options();
    let geo = problem.geometry();
    let deep_mass = geo.deep_mass().to_vec();
    let mut eval = evaluate(problem, &x)?;
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(eval.objective);
    }
    let mut eta = 1.0f64;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < budget {
        if support.len() == 1 {
            converged = deep_residual(problem, &eval) < opts.residual_tol;
            break;
        }
        iterations += 1;
        let accepted = match opts.method {
            Method::ExponentiatedGradient => {
                let step = eg_step(problem, &x, &eval, &mut eta)?;
                // A very steep coordinate near zero can force the shared step
                // size down until nothing else moves. Before treating such a
                // step as convergence, try re-aggregation, which scales each
                // coordinate by itself.
                let stalled = step.as_ref().is_none_or(|(c, _)| max_gap(c.iter(), x.iter()) < opts.tol);
                if stalled {
                    fixed_point_step(problem, &x, &eval, opts.damping)?.or(step)
                } else {
                    step
                }
            }
            Method::FixedPoint => fixed_point_step(problem, &x, &eval, opts.damping)?,
        };

        let Some((cand, ce)) = accepted else {
            // no improving step left: stationary up to rounding
            converged = deep_residual(problem, &eval) < opts.residual_tol;
            break;
        };
        let change = max_gap(cand.iter(), x.iter());
        x = cand;
        eval = ce;
        if opts.record_trace {
            trace.push(eval.objective);
        }

        let dropped: Vec<usize> = support
            .iter()
            .copied()
            .filter(|&i| eval.levels[0][0][i] < opts.prune_threshold)
            .collect();
        if !dropped.is_empty() && dropped.len() < support.len() {
            for i in dropped {
                support.remove(&i);
                prune(&mut x, n, i, &support);
            }
            eval = evaluate(problem, &x)?;
            if opts.record_trace {
                trace.push(eval.objective);
            }
            eta = 1.0;
            continue;
        }

        // Near a face of the simplex both methods creep toward it; drop the
        // smallest option early when doing so already does not hurt.
        if support.len() > 1 {
            let smallest = support
                .iter()
                .copied()
                .min_by(|&a, &b| eval.levels[0][0][a].total_cmp(&eval.levels[0][0][b]))
                .expect("support is not empty");
            if eval.levels[0][0][smallest] < DROP_TRIAL {
                let mut rest = support.clone();
                rest.remove(&smallest);
                let mut trial = x.clone();
                prune(&mut trial, n, smallest, &rest);
                let te = evaluate(problem, &trial)?;
                if te.objective >= eval.objective - noise_floor(eval.objective)
                    && reentry_slope(problem, &trial, &te, smallest).0 <= REENTRY_SLOPE
                {
                    support = rest;
                    x = trial;
                    eval = te;
                    if opts.record_trace {
                        trace.push(eval.objective);
                    }
                    eta = 1.0;
                    continue;
                }
            }
        }

        if change < opts.tol && deep_residual(problem, &eval) < opts.residual_tol {
            converged = true;
            break;
        }
    }

    // zero-mass cells report their parent's probabilities
    let d = geo.depth() - 1;
    for (b, &m) in deep_mass.iter().enumerate() {
        if m <= 0.0 {
            x[b * n..(b + 1) * n].copy_from_slice(&eval.levels[d][b]);
        }
    }
    Ok(Run {
        x,
        support,
        objective: eval.objective,
        iterations,
        converged,
        trace,
    })
}

/// Maximizes the reduced objective from the uniform starting point.
pub fn solve(problem: &ChoiceProblem, opts: &SolverOptions) -> Result<Solution> {
    let n = problem.n_options();
    let x0 = vec![1.0 / n as f64; problem.n_free()];
    solve_from(problem, x0, opts)
}

/// Maximizes the reduced objective from free variables `x0`.
pub fn solve_from(problem: &ChoiceProblem, x0: Vec<f64>, opts: &SolverOptions) -> Result<Solution> {
    opts.validate()?;
    check_cells(problem, &x0)?;
    let n = problem.n_options();
    let all: BTreeSet<usize> = (0..n).collect();
    let mut best = run_from(problem, x0, all.clone(), opts, opts.max_iter)?;
    let mut iterations = best.iterations;
    let mut trace = vec![std::mem::take(&mut best.trace)];

    // A pruned corner can satisfy the choice rule without being optimal:
    // bring back any dropped option that some spread over cells would
    // improve, seeded along the best such spread.
    'outer: for _ in 0..n {
        let dropped: Vec<usize> = all.difference(&best.support).copied().collect();
        let here = evaluate(problem, &best.x)?;
        for option in dropped {
            let budget = opts.max_iter.saturating_sub(iterations);
            if budget == 0 {
                break 'outer;
            }
            let (slope, profile) = reentry_slope(problem, &best.x, &here, option);
            if slope <= REENTRY_SLOPE {
                continue;
            }
            let peak = profile.iter().copied().fold(0.0, f64::max);
            let seed = reseeded(&best.x, n, option, |b| 1e-3 * profile[b] / peak);
            let mut support = best.support.clone();
            support.insert(option);
            let mut trial = run_from(problem, seed, support, opts, budget)?;
            iterations += trial.iterations;
            if trial.objective > best.objective + noise_floor(best.objective) {
                if opts.record_trace {
                    trace.push(std::mem::take(&mut trial.trace));
                }
                best = trial;
                continue 'outer;
            }
        }
        break;
    }

    let policy = Policy::from_cells(problem, &best.x)?;
    let report = verify_fixed_point(&policy, problem)?;
    let support = (0..n)
        .filter(|&i| policy.unconditional()[i] > 0.0)
        .collect();
    Ok(Solution {
        objective: best.objective,
        iterations,
        residual: report.max(),
        support,
        converged: best.converged && report.max() < opts.residual_tol,
        method: opts.method,
        trace: if opts.record_trace { trace } else { Vec::new() },
        policy,
    })
}

/// One row of the random-utility representation of a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasEntry {
    pub option: usize,
    pub state: usize,
    pub v_true: f64,
    /// `v / λM`.
    pub v_normalized: f64,
    /// Informational shift in normalized units; `-∞` for options never chosen.
    pub alpha: f64,
    /// `λM · alpha`.
    pub bias_payoff_units: f64,
}

/// Fixed effects `α_n(ω) = (λ1/λM) ln(N Pr(n)) + Σ_k (λk+1 − λk)/λM ·
/// ln(N Pr(n | level-k cell of ω))` that make the solution a logit model in
/// the perceived values `v/λM + α`.
pub fn ru_bias(solution: &Solution, problem: &ChoiceProblem) -> Vec<BiasEntry> {
    policy_bias(&solution.policy, problem)
}

pub fn policy_bias(policy: &Policy, problem: &ChoiceProblem) -> Vec<BiasEntry> {
    let geo = problem.geometry();
    let n = problem.n_options();
    let top = geo.top_multiplier;
    let mut rows = Vec::with_capacity(n * problem.n_states());
    for option in 0..n {
        for state in 0..problem.n_states() {
            let mut alpha = 0.0;
            for (k, w) in geo.weights.iter().enumerate() {
                let p = policy.levels[k][geo.cell_of_state[k][state]][option];
                if p > 0.0 {
                    alpha += w * (n as f64 * p).ln();
                } else {
                    alpha = f64::NEG_INFINITY;
                    break;
                }
            }
            let v = problem.payoff(option, state);
            rows.push(BiasEntry {
                option,
                state,
                v_true: v,
                v_normalized: v / top,
                alpha,
                bias_payoff_units: top * alpha,
            });
        }
    }
    rows
}
