//! Reads every word of a random ROM through the standard one-hot decoder and
//! through the block ROM (shared candidate generators), then reports the
//! transistor counts of both.
//!
//! ```bash
//! cargo run --release --example brom_equivalence -- 1024 64
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roma_sim::brom::{
    rom_read_brom, rom_read_standard, transistor_count, transistor_ratio, BRomArray, RomContents, RomKind,
    DEFAULT_NUM_CGEN,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>());
    let depth = args.next().transpose()?.unwrap_or(256);
    let width = args.next().transpose()?.unwrap_or(64);

    let rom = RomContents::random(depth, width, &mut ChaCha8Rng::seed_from_u64(1))?;
    let brom = BRomArray::new(&rom);
    for addr in 0..depth {
        assert_eq!(rom_read_standard(&rom, addr)?, rom_read_brom(&brom, addr)?, "address {addr}");
    }
    println!("{depth} words of {width} bits read identically");
    if brom.padded_depth() != depth {
        println!("depth padded to {} with zero words", brom.padded_depth());
    }

    let std = transistor_count(RomKind::Standard, depth, width, DEFAULT_NUM_CGEN);
    let blk = transistor_count(RomKind::Block, depth, width, DEFAULT_NUM_CGEN);
    println!("transistors: standard {std}, block {blk} ({:.4}x)", blk as f64 / std as f64);
    for w in [16, 64, 256, 1024] {
        println!("  width {w:>4}: asymptotic ratio {:.4}", transistor_ratio(w, DEFAULT_NUM_CGEN));
    }
    Ok(())
}
