//! Shared-exponent alignment of FP16 activations followed by an L-Unit group
//! dot product against INT4 weights, compared with the float reference.
//!
//! ```bash
//! cargo run --example align_and_dot
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roma_sim::numerics::{align_block, decode_fp16, encode_fp16};
use roma_sim::qcore::{lunit_group_dot, lunit_group_int, quantize_group, BitWidth, GROUP_SIZE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let acts = (0..GROUP_SIZE).map(|_| encode_fp16(rng.gen_range(-4.0..4.0))).collect::<Result<Vec<_>, _>>()?;
    let weights: Vec<f64> = (0..GROUP_SIZE).map(|_| rng.gen_range(-0.5..0.5)).collect();

    let aligned = align_block(&acts)?;
    println!("max exponent field: {}, vsum: {}", aligned.max_exp, aligned.vsum);
    for (k, (a, v)) in acts.iter().zip(&aligned.values).take(4).enumerate() {
        println!("  act[{k}] = {:+.6}  aligned {v:+5} -> {:+.6}", decode_fp16(*a)?, aligned.reconstruct(k));
    }

    for bits in [BitWidth::Int4, BitWidth::Int2] {
        let group = quantize_group(&weights, bits)?;
        let int = lunit_group_int(&aligned, &group)?;
        let dot = lunit_group_dot(&aligned, &group)?;
        let deq = group.dequantize();
        let float: f64 = acts.iter().zip(&deq).map(|(a, w)| decode_fp16(*a).unwrap() * w).sum();
        let exact: f64 = acts.iter().zip(&weights).map(|(a, w)| decode_fp16(*a).unwrap() * w).sum();
        println!("{bits:?}: integer core {int}, unit {dot:+.6}, dequantized {float:+.6}, unquantized {exact:+.6}");
    }
    Ok(())
}
