//! Leave-one-slide-out on a generated dataset, printing each fold against
//! the two baselines.
//!
//! ```text
//! cargo run --release -p stexp-core --example loocv_synth -- [epochs] [signal]
//! ```

use std::time::Instant;

use stexp_core::data::{synth_generate, GenConfig};
use stexp_core::evaluation::{run_fold, LoocvConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let signal = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let slides = synth_generate(
        &GenConfig {
            signal,
            ..GenConfig::default()
        },
        7,
    )
    .expect("valid generator config");
    let mut cfg = LoocvConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.seed = 7;
    println!("slide\tpcc_acg\ttrain_mean\trandom\tfirst_loss\tlast_loss\tseconds");
    for s in &slides {
        let t = Instant::now();
        let f = run_fold(&slides, &s.slide_id, &cfg).expect("fold");
        println!(
            "{}\t{:.4}\t{:.4}\t{:.4}\t{:.3}\t{:.3}\t{:.1}",
            s.slide_id,
            f.metrics.pcc_acg,
            f.mean_baseline.pcc_acg,
            f.random_baseline.pcc_acg,
            f.epoch_losses[0],
            f.epoch_losses.last().copied().unwrap_or(f64::NAN),
            t.elapsed().as_secs_f64()
        );
    }
}
