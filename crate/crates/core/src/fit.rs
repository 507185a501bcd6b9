//! Conditional-logit estimation of perceived option values from observed
//! choices.
//!
//! Each option gets one utility per distinct payoff it takes across states,
//! so the utility of option `n` in state `ω` is `β[n, v_n(ω)]`. The lowest
//! payoff of the last option is fixed at zero.

use thiserror::Error;

use crate::io::Observation;
use crate::problem::ChoiceProblem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no observations to fit")]
    Empty,
    #[error("the data do not identify the utilities (singular information matrix)")]
    NotIdentified,
    #[error("Newton iterations did not converge within {0} steps")]
    NoConvergence(usize),
}

/// Newton iterations stop when the score, divided by the number of
/// observations, is below this in sup norm.
pub const SCORE_TOL: f64 = 1e-9;
const MAX_NEWTON: usize = 500;
/// Estimates beyond this magnitude are treated as diverging to infinity
/// when the data are separated.
const DIVERGENCE: f64 = 25.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FitParam {
    pub option: usize,
    pub payoff: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// The likelihood has no finite maximizer in this coordinate.
    pub infinite: bool,
    /// Fixed at zero rather than estimated.
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit {
    pub params: Vec<FitParam>,
    /// Covariance of the finite, estimated parameters; indexed like
    /// `params`, zero rows for fixed or infinite entries.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub observations: usize,
    pub iterations: usize,
    pub separated: bool,
}

impl LogitFit {
    /// Estimate and standard error of `Σ_i weights[i] · params[i]`.
    pub fn contrast(&self, weights: &[f64]) -> (f64, f64) {
        let mut est = 0.0;
        for (w, p) in weights.iter().zip(&self.params) {
            if *w != 0.0 {
                est += w * p.estimate;
            }
        }
        let mut var = 0.0;
        for (i, wi) in weights.iter().enumerate() {
            for (j, wj) in weights.iter().enumerate() {
                var += wi * wj * self.covariance[i][j];
            }
        }
        (est, var.max(0.0).sqrt())
    }

    /// Utility at the option's highest payoff minus at its lowest, with its
    /// standard error. `None` if the option takes a single payoff value.
    pub fn spread(&self, option: usize) -> Option<(f64, f64)> {
        self.spread_weights(option).map(|w| self.contrast(&w))
    }

    /// Difference between two options' spreads.
    pub fn spread_difference(&self, a: usize, b: usize) -> Option<(f64, f64)> {
        let wa = self.spread_weights(a)?;
        let wb = self.spread_weights(b)?;
        let w: Vec<f64> = wa.iter().zip(&wb).map(|(x, y)| x - y).collect();
        Some(self.contrast(&w))
    }

    fn spread_weights(&self, option: usize) -> Option<Vec<f64>> {
        let idx: Vec<usize> = (0..self.params.len()).filter(|&i| self.params[i].option == option).collect();
        if idx.len() < 2 {
            return None;
        }
        // rows of one option are stored in ascending payoff order
        let mut w = vec![0.0; self.params.len()];
        w[*idx.last().unwrap()] = 1.0;
        w[idx[0]] = -1.0;
        Some(w)
    }
}

struct Design {
    params: Vec<(usize, f64)>,
    /// `slot[ω][n]`: row of `params` giving option `n`'s utility in `ω`.
    slot: Vec<Vec<usize>>,
    fixed: usize,
}

impl Design {
    fn new(problem: &ChoiceProblem) -> Self {
        let n_opt = problem.n_options();
        let mut params = Vec::new();
        let mut slot = vec![vec![0; n_opt]; problem.n_states()];
        for n in 0..n_opt {
            let mut values: Vec<f64> = problem.payoffs()[n].clone();
            values.sort_by(f64::total_cmp);
            values.dedup();
            let base = params.len();
            params.extend(values.iter().map(|v| (n, *v)));
            for (s, row) in slot.iter_mut().enumerate() {
                let v = problem.payoff(n, s);
                row[n] = base + values.iter().position(|u| *u == v).unwrap();
            }
        }
        let fixed = params.iter().position(|(n, _)| *n == n_opt - 1).unwrap();
        Self { params, slot, fixed }
    }
}

/// Log-likelihood, score and negative Hessian over parameters in `active`.
fn evaluate(
    design: &Design,
    counts: &[Vec<f64>],
    theta: &[f64],
    active: &[usize],
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let k = active.len();
    let mut pos = vec![usize::MAX; theta.len()];
    for (i, &a) in active.iter().enumerate() {
        pos[a] = i;
    }
    let mut ll = 0.0;
    let mut g = vec![0.0; k];
    let mut h = vec![vec![0.0; k]; k];
    for (s, row) in counts.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            continue;
        }
        let u: Vec<f64> = design.slot[s].iter().map(|&j| theta[j]).collect();
        let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = u.iter().map(|v| (v - max).exp()).sum();
        let lse = max + z.ln();
        let p: Vec<f64> = u.iter().map(|v| (v - lse).exp()).collect();
        for (n, c) in row.iter().enumerate() {
            if *c > 0.0 {
                ll += c * (u[n] - lse);
            }
        }
        // score and information in option space, then mapped to parameters
        for n in 0..row.len() {
            let i = pos[design.slot[s][n]];
            if i == usize::MAX {
                continue;
            }
            g[i] += row[n] - total * p[n];
            for m in 0..row.len() {
                let j = pos[design.slot[s][m]];
                if j == usize::MAX {
                    continue;
                }
                let cross = if n == m { p[n] - p[n] * p[m] } else { -p[n] * p[m] };
                h[i][j] += total * cross;
            }
        }
    }
    (ll, g, h)
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(1e-300);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 1e-13 * scale {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = l.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    y
}

/// Maximum-likelihood conditional logit by Newton's method.
pub fn fit_logit(problem: &ChoiceProblem, data: &[Observation]) -> Result<LogitFit, FitError> {
    if data.is_empty() {
        return Err(FitError::Empty);
    }
    let design = Design::new(problem);
    let mut counts = vec![vec![0.0; problem.n_options()]; problem.n_states()];
    for o in data {
        counts[o.state][o.option] += 1.0;
    }
    let separated = counts
        .iter()
        .any(|row| row.iter().sum::<f64>() > 0.0 && row.contains(&0.0));
    let n_obs = data.len() as f64;

    let mut theta = vec![0.0; design.params.len()];
    let mut active: Vec<usize> = (0..theta.len()).filter(|&i| i != design.fixed).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON {
        let (ll, g, h) = evaluate(&design, &counts, &theta, &active);
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / n_obs < SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let Some(l) = cholesky(&h) else {
            if separated {
                break;
            }
            return Err(FitError::NotIdentified);
        };
        let step = cholesky_solve(&l, &g);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let mut cand = theta.clone();
            for (i, &a) in active.iter().enumerate() {
                cand[a] += t * step[i];
            }
            let (cll, _, _) = evaluate(&design, &counts, &cand, &active);
            if cll >= ll {
                moved = step.iter().any(|d| (t * d).abs() > 1e-14);
                theta = cand;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            converged = true;
            break;
        }
        if separated && active.iter().any(|&a| theta[a].abs() > DIVERGENCE) {
            break;
        }
    }

    let mut infinite = vec![false; theta.len()];
    if separated {
        for &a in &active {
            if theta[a].abs() > DIVERGENCE {
                infinite[a] = true;
            }
        }
        active.retain(|&a| !infinite[a]);
        // let the finite coordinates settle with the diverging ones frozen
        for _ in 0..MAX_NEWTON {
            let (_, g, h) = evaluate(&design, &counts, &theta, &active);
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) / n_obs < SCORE_TOL {
                break;
            }
            let Some(l) = cholesky(&h) else { break };
            let step = cholesky_solve(&l, &g);
            for (i, &a) in active.iter().enumerate() {
                theta[a] += step[i];
            }
            iterations += 1;
        }
        converged = true;
    }
    if !converged {
        return Err(FitError::NoConvergence(MAX_NEWTON));
    }

    let (ll, _, h) = evaluate(&design, &counts, &theta, &active);
    let mut covariance = vec![vec![0.0; theta.len()]; theta.len()];
    if !active.is_empty() {
        let l = cholesky(&h).ok_or(FitError::NotIdentified)?;
        for (j, &aj) in active.iter().enumerate() {
            let mut e = vec![0.0; active.len()];
            e[j] = 1.0;
            let col = cholesky_solve(&l, &e);
            for (i, &ai) in active.iter().enumerate() {
                covariance[ai][aj] = col[i];
            }
        }
    }
    let params = design
        .params
        .iter()
        .enumerate()
        .map(|(i, &(option, payoff))| FitParam {
            option,
            payoff,
            estimate: if infinite[i] {
                f64::INFINITY.copysign(theta[i])
            } else {
                theta[i]
            },
            std_error: if infinite[i] {
                f64::INFINITY
            } else {
                covariance[i][i].max(0.0).sqrt()
            },
            infinite: infinite[i],
            normalized: i == design.fixed,
        })
        .collect();
    Ok(LogitFit {
        params,
        covariance,
        log_likelihood: ll,
        observations: data.len(),
        iterations,
        separated,
    })
}
