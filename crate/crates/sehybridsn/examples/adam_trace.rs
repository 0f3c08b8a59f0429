//! The Adam recurrence on a single scalar, traced step by step against
//! the hand-computed bias-corrected updates.
//!
//! ```bash
//! cargo run --example adam_trace
//! ```

use sehybridsn::tensor::Tensor;
use sehybridsn::train::{adam_step, AdamState};

fn main() -> sehybridsn::Result<()> {
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let mut p = Tensor::scalar(0.0f64);
    let mut state = AdamState::for_params(&[&p]);

    // Constant gradient 1: by-hand moments m_t, v_t and the update.
    let (mut m, mut v) = (0.0f64, 0.0f64);
    println!("step   parameter        hand-computed");
    for t in 1..=5 {
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut state, lr, b1, b2, eps)?;

        m = b1 * m + (1.0 - b1);
        v = b2 * v + (1.0 - b2);
        let m_hat = m / (1.0 - b1.powi(t));
        let v_hat = v / (1.0 - b2.powi(t));
        let expected_delta = -lr * m_hat / (v_hat.sqrt() + eps);
        println!("{t:4}   {:12.9}    delta {expected_delta:.9}", p.data()[0]);
    }

    // First-step bias correction makes m_hat = v_hat = 1, so the very
    // first move is -lr / (1 + eps), whatever the gradient's scale.
    let mut q = Tensor::scalar(0.0f64);
    let mut s = AdamState::for_params(&[&q]);
    adam_step(&mut [&mut q], &[Tensor::scalar(1e-4)], &mut s, lr, b1, b2, eps)?;
    println!("\nfirst step with gradient 1e-4: {:.9} (same magnitude as gradient 1)", q.data()[0]);
    Ok(())
}
