#![no_main]

use std::sync::OnceLock;

use libfuzzer_sys::fuzz_target;
use msse::io::{parse_choices, parse_problem_str};
use msse::ChoiceProblem;

const PROBLEM: &str = include_str!("../../crates/core/fixtures/example2.json");

fn problem() -> &'static ChoiceProblem {
    static P: OnceLock<ChoiceProblem> = OnceLock::new();
    P.get_or_init(|| parse_problem_str(PROBLEM).expect("fixture parses").problem)
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let p = problem();
    if let Ok(obs) = parse_choices(text, p) {
        for o in obs {
            assert!(o.state < p.n_states() && o.option < p.n_options());
        }
    }
});
