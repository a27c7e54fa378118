//! Area of an L-Unit weight store under the four layouts of the two-layer
//! cell model, plus a fused vs. separate comparison for a custom mix.
//!
//! ```bash
//! cargo run --example fused_cell_area
//! ```

use roma_sim::brom::{fused_area, lunit_area_comparison, single_layer_bound, CellAreaModel, CellKind};

fn main() {
    let model = CellAreaModel::default();
    let report = lunit_area_comparison(&model, 1024, 512);
    let sram = report.area(roma_sim::brom::LUnitDesign::SramCompute);
    println!("1024 x 512 L-Unit, area relative to SRAM + compute:");
    for (design, area) in &report.designs {
        println!("  {:<14} {:>10.0}  {:.3}", design.label(), area, area / sram);
    }
    println!("transistors: standard ROM {}, block ROM {}", report.standard_transistors, report.brom_transistors);

    let cells = [(CellKind::BRomBit, 4096.0), (CellKind::Compute, 4096.0)];
    let a = fused_area(&model, &cells);
    println!(
        "fused {:.1} vs separate {:.1}; base layer {:.0}% used, metal {:.0}% used",
        a.fused,
        a.separate,
        100.0 * a.base_utilization,
        100.0 * a.metal_utilization
    );

    let demands: Vec<_> = [CellKind::RomBit, CellKind::Compute].iter().map(|&k| model.demand(k)).collect();
    println!("ROM bit + compute both bound by one layer: {}", single_layer_bound(&demands, 1.0, 1.0));
}
