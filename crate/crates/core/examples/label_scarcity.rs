//! Compares the two-path model with its supervised-only variant (`w_max = 0`)
//! on a generated two-event corpus with few labels, across seeds.
//!
//! `cargo run --release --example label_scarcity -- [key=value ...]`

use std::collections::HashMap;
use std::time::Instant;

use dtsl::eval::run_loeo;
use dtsl::network::{Architecture, FilterPlan};
use dtsl::synthetic::{generate, SyntheticConfig};
use dtsl::train::TrainConfig;

fn main() -> dtsl::Result<()> {
    let kv: HashMap<String, f64> = std::env::args()
        .skip(1)
        .filter_map(|a| {
            let (k, v) = a.split_once('=')?;
            Some((k.to_string(), v.parse().ok()?))
        })
        .collect();
    let get = |k: &str, d: f64| kv.get(k).copied().unwrap_or(d);
    let corpus = generate(&SyntheticConfig {
        class_vocab: get("class_vocab", 30.0) as usize,
        shared_vocab: get("shared_vocab", 50.0) as usize,
        event_vocab: get("event_vocab", 20.0) as usize,
        class_tokens: get("class_tokens", 2.0) as usize,
        signal: get("signal", 1.0),
        ..SyntheticConfig::separable(&["alpha", "beta"], 500, 8, get("data_seed", 1.0) as u64)
    });
    let mut plan = FilterPlan::narrowed(get("divisor", 8.0) as usize);
    if let Some(&w) = kv.get("flat_filters") {
        plan.path[2] = w as usize;
    }
    let arch = Architecture::new(8, 8, 2).with_filters(plan);
    let base = TrainConfig {
        epochs: get("epochs", 40.0) as usize,
        t_ramp: get("t_ramp", 16.0),
        labeled_ratio: get("ratio", 0.05),
        dropout: get("dropout", 0.5),
        ..TrainConfig::new(arch)
    };
    let seeds = get("seeds", 5.0) as u64;
    let mut diffs = Vec::new();
    for seed in 0..seeds {
        let start = Instant::now();
        let dtsl = run_loeo(&corpus.records, &corpus.embeddings, &TrainConfig {
            seed,
            w_max: kv.get("w_max").copied(),
            ..base.clone()
        })?;
        let sup = run_loeo(&corpus.records, &corpus.embeddings, &TrainConfig {
            seed,
            w_max: Some(0.0),
            ..base.clone()
        })?;
        let d = dtsl.pooled.macro_f - sup.pooled.macro_f;
        println!(
            "seed {seed}: two-path {:.4}  supervised {:.4}  diff {d:+.4}  ({:?})",
            dtsl.pooled.macro_f,
            sup.pooled.macro_f,
            start.elapsed()
        );
        diffs.push(d);
    }
    diffs.sort_by(f64::total_cmp);
    println!("median diff {:+.4}", diffs[diffs.len() / 2]);
    Ok(())
}
