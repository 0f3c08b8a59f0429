//! Stratified train/validation/test splitting with the published
//! Indian Pines class totals: 5% + 5% yields exactly (512, 512, 9225).
//!
//! ```bash
//! cargo run --example stratified_split
//! ```

use sehybridsn::cli::split_summary;
use sehybridsn::data_io::GroundTruthMap;
use sehybridsn::preprocess::stratified_split;

fn main() -> sehybridsn::Result<()> {
    // Per-class labeled-pixel totals of the Indian Pines campaign.
    let counts = [46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93];
    let names: Vec<String> = (1..=16).map(|i| format!("class {i}")).collect();

    let total: usize = counts.iter().sum();
    let side = (total as f64).sqrt().ceil() as usize + 1;
    let mut labels = vec![0u16; side * side];
    let mut i = 0;
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            labels[i] = (c + 1) as u16;
            i += 1;
        }
    }
    let gt = GroundTruthMap::new(side, side, labels)?;

    let split = stratified_split(&gt, 0.05, 0.05, 42)?;
    print!("{}", split_summary(&gt, &split, &names));

    let (t, v, e) = split.counts();
    println!("\ntotals: train {t}, validation {v}, test {e}");

    // The assignment pins to JSON (run-length encoded) and back.
    let json = split.to_json();
    println!("serialized split: {} bytes of JSON", json.len());
    let back = sehybridsn::preprocess::SplitAssignment::from_json(&json)?;
    assert_eq!(back, split);
    println!("JSON round trip preserves every role");
    Ok(())
}
