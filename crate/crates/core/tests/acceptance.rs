//! One line per acceptance criterion; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use itq3::selfcheck::CHECKS;

fn main() -> ExitCode {
    println!("\nrunning {} acceptance criteria", CHECKS.len());
    let mut failed = Vec::new();
    for (id, _, check) in CHECKS {
        let start = Instant::now();
        let outcome = check();
        println!("{outcome} ({:.2}s)", start.elapsed().as_secs_f64());
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("\nacceptance: {} passed; 0 failed\n", CHECKS.len());
        ExitCode::SUCCESS
    } else {
        println!(
            "\nacceptance: {} passed; {} failed (criteria {:?})\n",
            CHECKS.len() - failed.len(),
            failed.len(),
            failed
        );
        ExitCode::FAILURE
    }
}
