//! Packs a toy checkpoint into a ROM image, writes it, reloads it, and checks
//! footprints of the full-size models against ROM capacity.
//!
//! ```bash
//! cargo run --example pack_rom_image
//! ```

use roma_sim::config::ModelConfig;
use roma_sim::perf::{ChipTotals, PerfModel};
use roma_sim::romimage::{fits_rom, load_image, load_lora_image, model_rom_bytes, Accounting};
use roma_sim::toy::toy_checkpoint;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ck = toy_checkpoint(&ModelConfig::toy(), 0)?;
    let dir = std::env::temp_dir().join("roma-pack-example");
    std::fs::create_dir_all(&dir)?;

    let path = dir.join("base.rom");
    std::fs::write(&path, ck.rom.to_bytes())?;
    let back = load_image(&std::fs::read(&path)?)?;
    assert_eq!(back, ck.rom);
    println!(
        "{}: {} tensors, {} parameters, {} bytes",
        path.display(),
        back.tensors().len(),
        back.parameter_count(),
        back.footprint()
    );
    for (name, m) in back.tensors().iter().take(4) {
        println!("  {name:<20} {} x {}", m.rows(), m.cols());
    }

    let lora_path = dir.join("lora.rom");
    std::fs::write(&lora_path, ck.lora.to_bytes())?;
    let lora = load_lora_image(&std::fs::read(&lora_path)?)?;
    println!(
        "{}: {} adapters, rank {}, {} SRAM bytes",
        lora_path.display(),
        lora.adapters().len(),
        lora.rank(),
        lora.sram_bytes()
    );

    let capacity = ChipTotals::ROMA.rom_bytes;
    println!("toy fits in ROM: {}", fits_rom(&back, capacity));
    for model in PerfModel::ALL {
        let cfg = model.config();
        for mode in [Accounting::AllParams, Accounting::BlocksOnly] {
            let bytes = model_rom_bytes(&cfg, mode);
            println!("{model} {mode:?}: {bytes} bytes, fits {}", bytes <= capacity);
        }
    }
    Ok(())
}
