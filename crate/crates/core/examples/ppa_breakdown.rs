//! Area and power split across unit classes, derived from the cell model and
//! the chip totals, and written as CSV sweep rows.
//!
//! ```bash
//! cargo run --example ppa_breakdown
//! ```

use roma_sim::engine::ChipTopology;
use roma_sim::perf::{ppa_report, sweep, write_csv, PerfModel, PpaParams, SweepKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = ppa_report(&PpaParams::default(), &ChipTopology::roma());
    println!("{:<11} {:>5} {:>9} {:>7}", "unit", "count", "mm2", "W");
    for r in &report.rows {
        println!("{:<11} {:>5} {:>9.1} {:>7.2}", r.class.label(), r.units, r.area_mm2, r.power_w);
    }
    println!("{:<11} {:>5} {:>9.1} {:>7.2}", "total", "", report.total_area_mm2, report.total_power_w);

    println!();
    write_csv(&sweep(PerfModel::Llama32_3bInt4, SweepKind::Ppa), std::io::stdout())?;
    Ok(())
}
