//! The built-in verification suite: finite-difference gradient checks
//! for every layer and the whole network, the PCA and kappa oracles,
//! and reshape round trips. Same machinery as `sehybridsn selfcheck`.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use sehybridsn::selfcheck;

fn main() {
    let results = selfcheck::run(None);
    for r in &results {
        println!(
            "{:28} {}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.detail
        );
    }
    if selfcheck::all_passed(&results) {
        println!("\nall {} checks passed", results.len());
    } else {
        std::process::exit(3);
    }
}
