//! How many KV-cache tokens fit in on-chip SRAM once LoRA adapters of a
//! given rank are resident.
//!
//! ```bash
//! cargo run --example capacity_planning
//! ```

use roma_sim::perf::{max_tokens, CapacityParams, PerfModel, CAPACITY_SRAM_MB, MB, SWEEP_RANKS};

fn main() {
    for model in PerfModel::ALL {
        let p = CapacityParams::for_model(model, 0);
        println!("{model}: {} B/token KV, {} B/rank adapters", p.kv_bytes_per_token, p.lora_bytes_per_rank);
        print!("{:>8}", "SRAM MB");
        for r in SWEEP_RANKS {
            print!("{:>10}", format!("r={r}"));
        }
        println!();
        for mb in CAPACITY_SRAM_MB {
            print!("{mb:>8}");
            for r in SWEEP_RANKS {
                print!("{:>10}", max_tokens(&p.with_budget(mb * MB), r as u64));
            }
            println!();
        }
    }
}
