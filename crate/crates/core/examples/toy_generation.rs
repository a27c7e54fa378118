//! Greedy generation on the toy model through the bit-exact engine, with the
//! FP64 shadow model checking per-layer drift.
//!
//! ```bash
//! cargo run --example toy_generation -- 0
//! ```

use roma_sim::config::ModelConfig;
use roma_sim::engine::{compare_with_shadow, load_runtime, ChipTopology, ShadowModel};
use roma_sim::toy::toy_checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let ck = toy_checkpoint(&ModelConfig::toy(), seed)?;
    let topo = ChipTopology::roma();
    let rt = load_runtime(&ck.rom, &ck.lora, &ck.config, &topo)?;

    let share = rt.weight_share("layers.0.attention.wq").expect("toy has layer 0");
    println!("wq rows per column: {:?}", share.rows_per_column);

    let prompt = [1, 5, 9, 17, 33];
    let tokens = rt.generate(&prompt, 32)?;
    println!("prompt: {prompt:?}");
    println!("tokens: {tokens:?}");

    let shadow = ShadowModel::new(&ck.rom, &ck.lora, &ck.config)?;
    let mut seq = prompt.to_vec();
    seq.extend(&tokens);
    let report = compare_with_shadow(&rt, &shadow, &seq, prompt.len())?;
    for (l, e) in report.layer_rel_error.iter().enumerate() {
        println!("layer {l} relative error {e:.3e}");
    }
    println!("greedy agreement {}/{}", report.greedy_matches, report.steps);
    Ok(())
}
