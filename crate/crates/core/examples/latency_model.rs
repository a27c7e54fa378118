//! Decode throughput and prefill latency curves from the anchored latency
//! model, and the cost of raising the adapter rank.
//!
//! ```bash
//! cargo run --example latency_model
//! ```

use roma_sim::perf::{decode_rate, prefill_time, rank_sensitivity, LatencyParams, PerfModel, ANCHOR_RANK};

fn main() {
    for model in PerfModel::ALL {
        let p = LatencyParams::for_model(model);
        println!("{model}");
        for kv in [0, 1024, 4096] {
            println!("  decode @ kv {kv:>4}: {:>8.0} tok/s", decode_rate(&p, kv));
        }
        for len in [256, 1024, 4096] {
            println!("  prefill {len:>4} tokens: {:>8.2} ms", prefill_time(&p, len, ANCHOR_RANK));
        }
        println!("  rank 16 -> 64 at 1024 tokens: {:+.2}%", 100.0 * rank_sensitivity(&p, 1024, 16, 64));
    }
}
