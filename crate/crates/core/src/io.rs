//! Problem files (JSON), choice-data files (CSV) and CSV number formatting.
//!
//! A problem file looks like
//!
//! ```json
//! {
//!   "states": ["w1", "w2", "w3", "w4"],
//!   "prior": [0.25, 0.25, 0.25, 0.25],
//!   "options": [{"name": "opt1", "payoffs": [1, 1, 0, 0]},
//!               {"name": "opt2", "payoffs": [1, 0, 1, 0]}],
//!   "sources": [{"blocks": [["w1", "w2"], ["w3", "w4"]], "multiplier": 0.25},
//!               {"blocks": [["w1", "w3"], ["w2", "w4"]], "multiplier": 1.0}]
//! }
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::info::{Distribution, InfoError};
use crate::partition::{build_layers_with_report, Event, InfoSource, Partition, PartitionError, StateSpace};
use crate::problem::{ChoiceProblem, ProblemError};

/// Tolerance on the prior's total before it is renormalized.
pub const PRIOR_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("choices line {line}: {message}")]
    Choices { line: usize, message: String },
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Info(#[from] InfoError),
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> IoError {
    IoError::Field {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionSpec {
    pub name: String,
    pub payoffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Two lists of state names that together partition the states.
    pub blocks: Vec<Vec<String>>,
    pub multiplier: f64,
}

/// On-disk problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub states: Vec<String>,
    pub prior: Vec<f64>,
    pub options: Vec<OptionSpec>,
    pub sources: Vec<SourceSpec>,
}

/// A validated problem plus any non-fatal notes produced while building it.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedProblem {
    pub problem: ChoiceProblem,
    /// Every source in the file, including unused ones.
    pub sources: Vec<InfoSource>,
    pub warnings: Vec<String>,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem specs always serialize") + "\n"
    }

    pub fn build(&self) -> Result<ParsedProblem, IoError> {
        let space = StateSpace::new(self.states.iter().cloned()).map_err(|e| field_err("states", e.to_string()))?;
        let n = space.len();
        if n < 2 {
            return Err(field_err("states", "at least two states are required"));
        }

        if self.prior.len() != n {
            return Err(field_err(
                "prior",
                format!("expected {n} entries, got {}", self.prior.len()),
            ));
        }
        if let Some(i) = self.prior.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(field_err(format!("prior[{i}]"), "must be a finite non-negative number"));
        }
        let total: f64 = self.prior.iter().sum();
        if (total - 1.0).abs() > PRIOR_SUM_TOLERANCE {
            return Err(field_err("prior", format!("entries sum to {total}, expected 1")));
        }
        let prior = Distribution::normalized(self.prior.clone())?;

        let mut names = HashSet::new();
        let mut options = Vec::with_capacity(self.options.len());
        let mut payoffs = Vec::with_capacity(self.options.len());
        for (i, o) in self.options.iter().enumerate() {
            if !names.insert(o.name.as_str()) {
                return Err(field_err(format!("options[{i}].name"), format!("duplicate option `{}`", o.name)));
            }
            if o.payoffs.len() != n {
                return Err(field_err(
                    format!("options[{i}].payoffs"),
                    format!("expected {n} entries, got {}", o.payoffs.len()),
                ));
            }
            if let Some(s) = o.payoffs.iter().position(|v| !v.is_finite()) {
                return Err(field_err(format!("options[{i}].payoffs[{s}]"), "must be finite"));
            }
            options.push(o.name.clone());
            payoffs.push(o.payoffs.clone());
        }
        if options.len() < 2 {
            return Err(field_err("options", "at least two options are required"));
        }

        if self.sources.is_empty() {
            return Err(field_err("sources", "at least one information source is required"));
        }
        let mut sources = Vec::with_capacity(self.sources.len());
        for (i, s) in self.sources.iter().enumerate() {
            let field = format!("sources[{i}]");
            if s.blocks.len() != 2 {
                return Err(field_err(
                    format!("{field}.blocks"),
                    format!("expected 2 blocks, got {}", s.blocks.len()),
                ));
            }
            let mut blocks = Vec::with_capacity(2);
            for (j, b) in s.blocks.iter().enumerate() {
                let mut mask = Event::EMPTY;
                for name in b {
                    let pos = space.position(name).ok_or_else(|| {
                        field_err(format!("{field}.blocks[{j}]"), format!("unknown state `{name}`"))
                    })?;
                    if mask.contains(pos) {
                        return Err(field_err(format!("{field}.blocks[{j}]"), format!("state `{name}` listed twice")));
                    }
                    mask = mask.union(Event::singleton(pos));
                }
                blocks.push(mask);
            }
            let partition = Partition::new(n, blocks).map_err(|e| field_err(format!("{field}.blocks"), e.to_string()))?;
            let source = InfoSource::new(partition, s.multiplier)
                .map_err(|e| field_err(format!("{field}.multiplier"), e.to_string()))?;
            sources.push(source);
        }

        let (layers, dropped) = build_layers_with_report(&sources).map_err(|e| match e {
            PartitionError::NotGenerating { coarsest } => field_err(
                "sources",
                format!(
                    "sources cannot reveal the state; finest achievable partition is {}",
                    describe_blocks(&space, coarsest.blocks())
                ),
            ),
            other => other.into(),
        })?;
        let warnings = dropped
            .iter()
            .map(|s| {
                format!(
                    "source {} with multiplier {} is never used: cheaper sources already reveal the state",
                    describe_blocks(&space, s.partition().blocks()),
                    s.multiplier()
                )
            })
            .collect();

        let problem = ChoiceProblem::new(space, prior, options, payoffs, layers)?;
        Ok(ParsedProblem {
            problem,
            sources,
            warnings,
        })
    }

    /// Canonical file for a problem: each layer is written as binary sources
    /// (block vs. rest) whose join is that layer's partition.
    pub fn from_problem(problem: &ChoiceProblem) -> Self {
        let space = problem.space();
        let names = |e: &Event| e.states().map(|s| space.label(s).to_string()).collect::<Vec<_>>();
        let full = space.full();
        let mut sources = Vec::new();
        for layer in problem.layers().layers() {
            let blocks = layer.partition.blocks();
            let singles = if blocks.len() == 2 { 1 } else { blocks.len() - 1 };
            for b in &blocks[..singles] {
                let rest = Event::from_mask(full.mask() & !b.mask());
                sources.push(SourceSpec {
                    blocks: vec![names(b), names(&rest)],
                    multiplier: layer.multiplier,
                });
            }
        }
        Self {
            states: space.labels().to_vec(),
            prior: problem.prior().probs().to_vec(),
            options: problem
                .options()
                .iter()
                .zip(problem.payoffs())
                .map(|(name, p)| OptionSpec {
                    name: name.clone(),
                    payoffs: p.clone(),
                })
                .collect(),
            sources,
        }
    }
}

pub fn describe_blocks(space: &StateSpace, blocks: &[Event]) -> String {
    let parts: Vec<String> = blocks
        .iter()
        .map(|b| {
            let names: Vec<&str> = b.states().map(|s| space.label(s)).collect();
            format!("{{{}}}", names.join(","))
        })
        .collect();
    format!("{{{}}}", parts.join(", "))
}

pub fn parse_problem_str(text: &str) -> Result<ParsedProblem, IoError> {
    ProblemSpec::from_json(text)?.build()
}

pub fn read_problem_spec(path: &Path) -> Result<ProblemSpec, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    ProblemSpec::from_json(&text)
}

pub fn parse_problem(path: &Path) -> Result<ParsedProblem, IoError> {
    read_problem_spec(path)?.build()
}

/// One observed choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub state: usize,
    pub option: usize,
}

/// Reads `state,option` rows (header required) naming states and options
/// of `problem`.
pub fn parse_choices(text: &str, problem: &ChoiceProblem) -> Result<Vec<Observation>, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| IoError::Choices {
        line: 1,
        message: e.to_string(),
    })?;
    let state_col = headers.iter().position(|h| h == "state");
    let option_col = headers.iter().position(|h| h == "option");
    let (Some(state_col), Some(option_col)) = (state_col, option_col) else {
        return Err(IoError::Choices {
            line: 1,
            message: "header must contain `state` and `option` columns".into(),
        });
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IoError::Choices {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let state_name = record.get(state_col).unwrap_or("");
        let option_name = record.get(option_col).unwrap_or("");
        let state = problem.space().position(state_name).ok_or_else(|| IoError::Choices {
            line,
            message: format!("unknown state `{state_name}`"),
        })?;
        let option = problem
            .options()
            .iter()
            .position(|o| o == option_name)
            .ok_or_else(|| IoError::Choices {
                line,
                message: format!("unknown option `{option_name}`"),
            })?;
        out.push(Observation { state, option });
    }
    Ok(out)
}

/// Formats a number with 12 significant digits, dropping trailing zeros.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..12).contains(&exp) {
        return format!("{}e{exp}", trim_zeros(mantissa));
    }
    let decimals = (11 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Quotes a CSV field when it needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Appends one CSV row (LF-terminated) to `out`.
pub fn push_row<S: AsRef<str>>(out: &mut String, fields: &[S]) {
    let row: Vec<String> = fields.iter().map(|f| csv_field(f.as_ref())).collect();
    let _ = writeln!(out, "{}", row.join(","));
}
