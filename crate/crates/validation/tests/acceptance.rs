//! Acceptance criteria 1-11, one pass/fail line each.
//!
//! Runs without the libtest harness so the lines are always printed; exits
//! nonzero if any criterion fails. Arguments select criteria by number.

use std::time::Instant;

use likadj_validation::CRITERIA;

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let id = format!("criterion-{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id == *f || id.ends_with(&format!("-{f}"))) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let status = if out.pass { "PASS" } else { "FAIL" };
        println!("{status} {id:<12} {name} ({:.1} s): {}", start.elapsed().as_secs_f64(), out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
