//! All acceptance criteria, one line each. Runs without the libtest
//! harness so the table is always printed; numeric arguments restrict the
//! run, e.g. `cargo test --test acceptance -- 1 4 7`.

use std::process::ExitCode;

use bsch_core::certify::{Certifier, CRITERIA};

fn main() -> ExitCode {
    let mut ids: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if ids.is_empty() {
        ids = (1..=CRITERIA.len()).collect();
    }
    let certifier = Certifier::new();
    let mut failed = Vec::new();
    for id in ids {
        let outcome = certifier.run(id);
        println!("{}", outcome.line());
        if !outcome.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
