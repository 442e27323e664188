//! Times full training steps (forward, backward, Adam update).
//!
//! `cargo run --release --example step_timing -- [max_len] [embed_dim] [batch] [divisor]`
//!
//! `divisor` narrows every filter count (1 is the standard plan).

use std::time::Instant;

use dtsl::network::{init_network, Architecture, Dropout, FilterPlan};
use dtsl::optim::{adam_step, AdamConfig, AdamState};
use dtsl::train::compute_gradients;
use dtsl::Tensor;

fn main() -> dtsl::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let (l, d, b, divisor) = (arg(0, 8), arg(1, 8), arg(2, 25), arg(3, 1));
    let arch = Architecture::new(l, d, 2).with_filters(FilterPlan::narrowed(divisor));
    let mut params = init_network(arch, 0)?;
    let mut adam = AdamState::for_network(AdamConfig::default(), &params)?;
    let batch = Tensor::new(
        arch.input_shape(b),
        (0..b * l * d).map(|i| (i as f64 * 0.37).sin()).collect(),
    )?;
    let labels: Vec<_> = (0..b).map(|i| (i % 3 == 0).then_some(i % 2)).collect();
    println!("{} parameters", params.parameter_count());
    for step in 0..3 {
        let start = Instant::now();
        let (loss, grads) = compute_gradients(&params, &batch, &labels, 0.5, &Dropout::training(0.5, step))?;
        adam_step(&mut params, &grads, &mut adam)?;
        println!("L={l} D={d} B={b}: step {:?}, total loss {:.6}", start.elapsed(), loss.total);
    }
    Ok(())
}
