//! Confusion-matrix scoring: overall accuracy, average accuracy and the
//! kappa coefficient, rendered in the usual per-class table layout.
//!
//! ```bash
//! cargo run --example metrics_report
//! ```

use sehybridsn::metrics::ConfusionMatrix;

fn main() -> sehybridsn::Result<()> {
    // A 3-class evaluation stream: (true, predicted).
    let observations = [
        (1u16, 1u16),
        (1, 1),
        (1, 2),
        (2, 2),
        (2, 2),
        (2, 2),
        (2, 3),
        (3, 3),
        (3, 3),
        (3, 1),
    ];
    let mut cm = ConfusionMatrix::new(3);
    for &(t, p) in &observations {
        cm.accumulate(t, p)?;
    }

    println!("confusion matrix (rows = true, cols = predicted):");
    print!("{}", cm.to_csv());

    let report = cm.report()?;
    let names = vec!["water".to_string(), "forest".to_string(), "urban".to_string()];
    println!("\n{}", report.render_table(&names));

    // kappa corrects overall accuracy for chance agreement computed
    // from the marginals.
    let p_o = cm.trace() as f64 / cm.total() as f64;
    let mut p_e = 0.0;
    for c in 1..=3 {
        p_e += (cm.row_sum(c) as f64 / cm.total() as f64) * (cm.col_sum(c) as f64 / cm.total() as f64);
    }
    println!("p_o = {p_o:.3}, p_e = {p_e:.3}, kappa = (p_o - p_e)/(1 - p_e) = {:.4}", report.kappa);
    Ok(())
}
