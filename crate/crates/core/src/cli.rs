//! Command-line front end: `solve`, `sweep`, `bias`, `simulate`, `fit` and
//! `verify`, all writing CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fit::{fit_logit, FitError};
use crate::info::total_uncertainty;
use crate::io::{fmt_num, parse_choices, parse_problem, push_row, IoError, ParsedProblem};
use crate::oracle::{
    direct_policy_solve, finite_diff_grad, gradient_discrepancy, grid_solve, min_strategy_cost, OracleConfig,
    OracleError,
};
use crate::partition::{build_layers, InfoSource, MULTIPLIER_MERGE_TOLERANCE};
use crate::problem::ChoiceProblem;
use crate::solver::{corollary_gradient, corollary_objective, ru_bias, solve, Method, SolveError, Solution, SolverOptions};

/// Environment variable capping the number of sweep worker threads.
pub const THREADS_ENV: &str = "MSSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "msse", version, about = "Rational inattention with multisource Shannon entropy costs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the optimal choice probabilities.
    Solve(SolveArgs),
    /// Solve over a range of one multiplier group.
    Sweep(SweepArgs),
    /// Solve and print the random-utility bias of each option in each state.
    Bias(SolveArgs),
    /// Draw states and choices from the optimal policy.
    Simulate(SimulateArgs),
    /// Fit a conditional logit to choice data.
    Fit(FitArgs),
    /// Check the solver and cost functions against brute-force references.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gradient,
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Problem file (JSON).
    #[arg(long)]
    pub problem: PathBuf,
    /// Stop when the largest change in the free choice probabilities is below this.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Gradient)]
    pub method: MethodArg,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Multiplier group to vary: `lambda1` is the cheapest distinct multiplier
    /// in the file, `lambda2` the next, and so on.
    #[arg(long)]
    pub param: String,
    #[arg(long)]
    pub from: f64,
    #[arg(long)]
    pub to: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = Scale::Linear)]
    pub scale: Scale,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Problem file naming the states, options and payoffs.
    #[arg(long)]
    pub problem: PathBuf,
    /// CSV with `state,option` columns.
    #[arg(long)]
    pub choices: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("solver did not converge; no draws produced")]
    NotConverged,
}

/// CSV text plus how the run ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub csv: String,
    pub warnings: Vec<String>,
    /// False when a solve failed to converge or a verification check failed.
    pub ok: bool,
}

fn solver_options(args: &SolveArgs) -> Result<SolverOptions, CliError> {
    if !(args.tol > 0.0) {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    Ok(SolverOptions {
        method: match args.method {
            MethodArg::Gradient => Method::ExponentiatedGradient,
            MethodArg::FixedPoint => Method::FixedPoint,
        },
        tol: args.tol,
        max_iter: args.max_iter,
        ..SolverOptions::default()
    })
}

fn load(args: &SolveArgs) -> Result<(ParsedProblem, SolverOptions), CliError> {
    let opts = solver_options(args)?;
    Ok((parse_problem(&args.problem)?, opts))
}

pub fn run_solve(args: &SolveArgs) -> Result<Report, CliError> {
    let (parsed, opts) = load(args)?;
    let problem = &parsed.problem;
    let sol = solve(problem, &opts)?;
    let mut csv = String::new();
    push_row(&mut csv, &["state", "option", "prob", "value"]);
    for s in 0..problem.n_states() {
        for (n, name) in problem.options().iter().enumerate() {
            push_row(
                &mut csv,
                &[
                    problem.space().label(s).to_string(),
                    name.clone(),
                    fmt_num(sol.policy.prob(n, s)),
                    fmt_num(problem.payoff(n, s)),
                ],
            );
        }
    }
    csv.push('\n');
    push_row(&mut csv, &["option", "uncond_prob"]);
    for (n, name) in problem.options().iter().enumerate() {
        push_row(&mut csv, &[name.clone(), fmt_num(sol.policy.unconditional()[n])]);
    }
    csv.push('\n');
    push_row(&mut csv, &["objective", "residual", "iterations"]);
    push_row(
        &mut csv,
        &[fmt_num(sol.objective), fmt_num(sol.residual), sol.iterations.to_string()],
    );
    Ok(Report {
        csv,
        warnings: convergence_warning(&sol, parsed.warnings),
        ok: sol.converged,
    })
}

fn convergence_warning(sol: &Solution, mut warnings: Vec<String>) -> Vec<String> {
    if !sol.converged {
        warnings.push(format!(
            "solver stopped after {} iterations without converging (residual {})",
            sol.iterations,
            fmt_num(sol.residual)
        ));
    }
    warnings
}

/// Distinct multipliers among `sources`, ascending, merged within the
/// layer tolerance.
fn multiplier_groups(sources: &[InfoSource]) -> Vec<f64> {
    let mut values: Vec<f64> = sources.iter().map(InfoSource::multiplier).collect();
    values.sort_by(f64::total_cmp);
    let mut groups: Vec<f64> = Vec::new();
    for v in values {
        match groups.last() {
            Some(&g) if (v - g).abs() <= MULTIPLIER_MERGE_TOLERANCE * g.abs().max(v.abs()) => {}
            _ => groups.push(v),
        }
    }
    groups
}

fn sweep_points(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    let (from, to, steps) = (args.from, args.to, args.steps);
    if !(from.is_finite() && to.is_finite() && from > 0.0 && to > 0.0) {
        return Err(CliError::Usage("--from and --to must be positive".into()));
    }
    if from > to {
        return Err(CliError::Usage("--from must not exceed --to".into()));
    }
    if steps == 0 || (steps == 1 && from != to) {
        return Err(CliError::Usage("--steps must be at least 2 unless --from equals --to".into()));
    }
    if steps == 1 {
        return Ok(vec![from]);
    }
    let last = (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            if i == 0 {
                from
            } else if i == steps - 1 {
                to
            } else {
                let t = i as f64 / last;
                match args.scale {
                    Scale::Linear => from + t * (to - from),
                    Scale::Log => (from.ln() + t * (to.ln() - from.ln())).exp(),
                }
            }
        })
        .collect())
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run_sweep(args: &SweepArgs) -> Result<Report, CliError> {
    let (parsed, opts) = load(&args.solve)?;
    let groups = multiplier_groups(&parsed.sources);
    let group = args
        .param
        .strip_prefix("lambda")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|k| (1..=groups.len()).contains(k))
        .ok_or_else(|| {
            CliError::Usage(format!(
                "--param must be one of lambda1..lambda{} for this problem, got `{}`",
                groups.len(),
                args.param
            ))
        })?;
    let target = groups[group - 1];
    let points = sweep_points(args)?;
    let base = &parsed.problem;

    let solve_at = |value: f64| -> Result<Solution, CliError> {
        let sources: Vec<InfoSource> = parsed
            .sources
            .iter()
            .map(|s| {
                let m = s.multiplier();
                if (m - target).abs() <= MULTIPLIER_MERGE_TOLERANCE * m.abs().max(target.abs()) {
                    InfoSource::new(s.partition().clone(), value)
                } else {
                    Ok(s.clone())
                }
            })
            .collect::<Result<_, _>>()
            .map_err(IoError::from)?;
        let layers = build_layers(&sources).map_err(IoError::from)?;
        let problem = ChoiceProblem::new(
            base.space().clone(),
            base.prior().clone(),
            base.options().to_vec(),
            base.payoffs().to_vec(),
            layers,
        )
        .map_err(IoError::from)?;
        Ok(solve(&problem, &opts)?)
    };
    let solutions: Vec<Solution> = thread_pool()?.install(|| {
        points
            .par_iter()
            .map(|&v| solve_at(v))
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut csv = String::new();
    push_row(&mut csv, &["lambda_value", "state", "option", "prob"]);
    let mut warnings = parsed.warnings.clone();
    let mut ok = true;
    for (value, sol) in points.iter().zip(&solutions) {
        if !sol.converged {
            ok = false;
            warnings.push(format!("solve at {} = {} did not converge", args.param, fmt_num(*value)));
        }
        for s in 0..base.n_states() {
            for (n, name) in base.options().iter().enumerate() {
                push_row(
                    &mut csv,
                    &[
                        fmt_num(*value),
                        base.space().label(s).to_string(),
                        name.clone(),
                        fmt_num(sol.policy.prob(n, s)),
                    ],
                );
            }
        }
    }
    Ok(Report { csv, warnings, ok })
}

pub fn run_bias(args: &SolveArgs) -> Result<Report, CliError> {
    let (parsed, opts) = load(args)?;
    let problem = &parsed.problem;
    let sol = solve(problem, &opts)?;
    let mut csv = String::new();
    push_row(&mut csv, &["option", "state", "v_true", "alpha", "bias_payoff_units"]);
    for row in ru_bias(&sol, problem) {
        push_row(
            &mut csv,
            &[
                problem.options()[row.option].clone(),
                problem.space().label(row.state).to_string(),
                fmt_num(row.v_true),
                fmt_num(row.alpha),
                fmt_num(row.bias_payoff_units),
            ],
        );
    }
    Ok(Report {
        csv,
        warnings: convergence_warning(&sol, parsed.warnings),
        ok: sol.converged,
    })
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the last partial sum: take the last positive entry
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// `draws` independent `(state, option)` pairs from the prior and a policy,
/// using ChaCha8 seeded with `seed`.
pub fn simulate_draws(problem: &ChoiceProblem, state_probs: &[Vec<f64>], draws: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = problem.prior().probs();
    (0..draws)
        .map(|_| {
            let s = draw(&mut rng, prior);
            (s, draw(&mut rng, &state_probs[s]))
        })
        .collect()
}

pub fn run_simulate(args: &SimulateArgs) -> Result<Report, CliError> {
    if args.draws == 0 {
        return Err(CliError::Usage("--draws must be at least 1".into()));
    }
    let (parsed, opts) = load(&args.solve)?;
    let problem = &parsed.problem;
    let sol = solve(problem, &opts)?;
    if !sol.converged {
        return Err(CliError::NotConverged);
    }
    let mut csv = String::with_capacity(args.draws * 16);
    push_row(&mut csv, &["state", "option"]);
    for (s, n) in simulate_draws(problem, sol.policy.state_probs(), args.draws, args.seed) {
        push_row(&mut csv, &[problem.space().label(s), problem.options()[n].as_str()]);
    }
    Ok(Report {
        csv,
        warnings: parsed.warnings,
        ok: true,
    })
}

pub fn run_fit(args: &FitArgs) -> Result<Report, CliError> {
    let parsed = parse_problem(&args.problem)?;
    let problem = &parsed.problem;
    let text = std::fs::read_to_string(&args.choices).map_err(|source| IoError::Read {
        path: args.choices.display().to_string(),
        source,
    })?;
    let data = parse_choices(&text, problem)?;
    let fit = fit_logit(problem, &data)?;

    let mut csv = String::new();
    push_row(&mut csv, &["option", "payoff", "estimate", "std_error", "infinite"]);
    for p in &fit.params {
        push_row(
            &mut csv,
            &[
                problem.options()[p.option].clone(),
                fmt_num(p.payoff),
                fmt_num(p.estimate),
                fmt_num(p.std_error),
                p.infinite.to_string(),
            ],
        );
    }
    csv.push('\n');
    push_row(&mut csv, &["option", "spread", "std_error"]);
    for (n, name) in problem.options().iter().enumerate() {
        if let Some((est, se)) = fit.spread(n) {
            push_row(&mut csv, &[name.clone(), fmt_num(est), fmt_num(se)]);
        }
    }
    csv.push('\n');
    push_row(&mut csv, &["log_likelihood", "observations", "iterations"]);
    push_row(
        &mut csv,
        &[
            fmt_num(fit.log_likelihood),
            fit.observations.to_string(),
            fit.iterations.to_string(),
        ],
    );
    let mut warnings = parsed.warnings;
    if fit.params.iter().any(|p| p.infinite) {
        warnings.push("some option is never or always chosen in a state: infinite estimates flagged".into());
    }
    Ok(Report { csv, warnings, ok: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

impl CheckStatus {
    fn label(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "SKIP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

fn compare(name: &'static str, got: f64, want: f64, tol: f64) -> Check {
    let gap = (got - want).abs();
    Check {
        name,
        status: if gap <= tol { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("{} vs {} (gap {}, tolerance {})", fmt_num(got), fmt_num(want), fmt_num(gap), fmt_num(tol)),
    }
}

fn skipped(name: &'static str, err: impl std::fmt::Display) -> Check {
    Check {
        name,
        status: CheckStatus::Skip,
        detail: err.to_string(),
    }
}

/// Scales each block of `y` to sum to one.
fn renormalized(y: &[f64], block_len: usize) -> Vec<f64> {
    y.chunks(block_len)
        .flat_map(|c| {
            let t: f64 = c.iter().sum();
            c.iter().map(move |v| v / t)
        })
        .collect()
}

/// Runs every brute-force comparison that fits the oracle caps.
pub fn verify_checks(parsed: &ParsedProblem) -> Result<Vec<Check>, CliError> {
    let problem = &parsed.problem;
    let config = OracleConfig::default();
    let mut checks = Vec::new();

    let tu = total_uncertainty(problem.layers(), problem.prior()).map_err(IoError::from)?;
    checks.push(match min_strategy_cost(&parsed.sources, problem.prior(), &config) {
        Ok((cost, _)) => compare("strategy_enumeration", tu, cost, 1e-10),
        Err(e) => skipped("strategy_enumeration", e),
    });

    let sol = solve(problem, &SolverOptions::default())?;
    checks.push(Check {
        name: "fixed_point",
        status: if sol.converged && sol.residual < 1e-8 {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        detail: format!("residual {} after {} iterations", fmt_num(sol.residual), sol.iterations),
    });
    let value = sol.policy.value(problem)?;
    checks.push(compare("objective_identity", sol.objective, value, 1e-8));

    checks.push(match grid_solve(problem, &config) {
        Ok((g, _)) => compare("grid_oracle", sol.objective, g, 1e-5),
        Err(e) => skipped("grid_oracle", e),
    });
    checks.push(match direct_policy_solve(problem, &config) {
        Ok((d, _)) => compare("direct_oracle", sol.objective, d, 1e-5),
        Err(e) => skipped("direct_oracle", e),
    });

    let n = problem.n_options();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let raw: Vec<f64> = (0..problem.n_free()).map(|_| rng.gen_range(0.1..1.0)).collect();
        let x = renormalized(&raw, n);
        let analytic = corollary_gradient(problem, &x)?;
        let f = |y: &[f64]| corollary_objective(problem, &renormalized(y, n)).unwrap_or(f64::NAN);
        let numeric = finite_diff_grad(f, &x, 1e-6, n)?;
        worst = worst.max(gradient_discrepancy(&analytic, &numeric, n));
    }
    checks.push(Check {
        name: "gradient",
        status: if worst <= 1e-5 { CheckStatus::Pass } else { CheckStatus::Fail },
        detail: format!("largest relative error {} over 10 points", fmt_num(worst)),
    });
    Ok(checks)
}

pub fn run_verify(args: &VerifyArgs) -> Result<Report, CliError> {
    let parsed = parse_problem(&args.problem)?;
    let checks = verify_checks(&parsed)?;
    let mut csv = String::new();
    push_row(&mut csv, &["check", "status", "detail"]);
    for c in &checks {
        push_row(&mut csv, &[c.name, c.status.label(), c.detail.as_str()]);
    }
    Ok(Report {
        csv,
        warnings: parsed.warnings,
        ok: checks.iter().all(|c| c.status != CheckStatus::Fail),
    })
}

impl Command {
    fn out(&self) -> Option<&PathBuf> {
        match self {
            Command::Solve(a) | Command::Bias(a) => a.out.as_ref(),
            Command::Sweep(a) => a.solve.out.as_ref(),
            Command::Simulate(a) => a.solve.out.as_ref(),
            Command::Fit(a) => a.out.as_ref(),
            Command::Verify(a) => a.out.as_ref(),
        }
    }
}

pub fn run(cli: &Cli) -> Result<Report, CliError> {
    match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Bias(a) => run_bias(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Fit(a) => run_fit(a),
        Command::Verify(a) => run_verify(a),
    }
}

/// Runs the command and writes its output; exit status 0 on success, 1 on
/// bad input, 2 when a solve does not converge or a check fails.
pub fn main_with(cli: Cli) -> ExitCode {
    let report = match run(&cli) {
        Ok(r) => r,
        Err(CliError::NotConverged) => {
            eprintln!("error: {}", CliError::NotConverged);
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let written = match cli.command.out() {
        Some(path) => std::fs::write(path, &report.csv).map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        }),
        None => {
            use std::io::Write;
            std::io::stdout()
                .lock()
                .write_all(report.csv.as_bytes())
                .map_err(|source| CliError::Write {
                    path: "standard output".into(),
                    source,
                })
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    if report.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
