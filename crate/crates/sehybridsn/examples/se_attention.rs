//! Squeeze-and-excitation gating on a toy feature map: the gate vector
//! lives strictly inside (0,1), so the block can only attenuate, and
//! zeroed bottleneck weights force every gate to exactly 0.5.
//!
//! ```bash
//! cargo run --example se_attention
//! ```

use sehybridsn::nn::{se_forward, SeBlock};
use sehybridsn::rng::Pcg32;
use sehybridsn::tensor::Tensor;

fn main() -> sehybridsn::Result<()> {
    let (channels, reduction) = (8usize, 4usize);
    let mut rng = Pcg32::new(11, 0);
    let shape = [1usize, channels, 4, 4];
    let n: usize = shape.iter().product();
    let input = Tensor::<f64>::from_vec(
        &shape,
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )?;

    let block = SeBlock::init(channels, reduction, 3, "example")?;
    let (output, cache) = se_forward(&input, &block)?;

    println!("channel   squeeze (mean)   gate");
    for c in 0..channels {
        println!(
            "{:7}   {:14.4}   {:.4}",
            c,
            cache.squeeze.data()[c],
            cache.gate.data()[c]
        );
    }
    assert!(cache.gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
    assert!(output
        .data()
        .iter()
        .zip(input.data())
        .all(|(o, i)| o.abs() <= i.abs() + 1e-15));
    println!("\ngates in (0,1); |output| <= |input| everywhere");

    // With zero bottleneck weights the pre-sigmoid is 0, so every gate
    // is sigmoid(0) = 1/2 and the block halves its input.
    let mut zeroed = block.clone();
    zeroed.w1 = Tensor::zeros(&[channels / reduction, channels]);
    zeroed.w2 = Tensor::zeros(&[channels, channels / reduction]);
    let (halved, cache) = se_forward(&input, &zeroed)?;
    assert!(cache.gate.data().iter().all(|&g| g == 0.5));
    assert!(halved
        .data()
        .iter()
        .zip(input.data())
        .all(|(o, i)| (o - 0.5 * i).abs() < 1e-15));
    println!("zeroed excitation weights gate every channel at exactly 0.5");
    Ok(())
}
