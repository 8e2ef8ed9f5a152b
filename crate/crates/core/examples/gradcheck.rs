//! Runs the finite-difference gradient suite, or a single named check.
//!
//!     cargo run --release --example gradcheck [name]

use std::time::Instant;

use tstnn::gradcheck::suite;

fn main() -> tstnn::Result<()> {
    let only = std::env::args().nth(1);
    let mut failed = 0;
    for (name, f) in suite::all() {
        if only.as_deref().is_some_and(|o| o != name) {
            continue;
        }
        let t = Instant::now();
        let report = f()?;
        println!("{report}  ({:.2}s)", t.elapsed().as_secs_f64());
        failed += usize::from(!report.passed());
    }
    println!("{failed} failed");
    Ok(())
}
