#![no_main]

use libfuzzer_sys::fuzz_target;
use msse::io::{parse_problem_str, ProblemSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(parsed) = parse_problem_str(text) {
        // anything accepted must survive a canonical round trip
        let canonical = ProblemSpec::from_problem(&parsed.problem).to_json();
        let again = parse_problem_str(&canonical).expect("canonical file parses");
        assert_eq!(again.problem, parsed.problem);
    }
});
