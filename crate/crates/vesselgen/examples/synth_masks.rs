//! Generate a dataset of procedural artery/vein masks and summarize it.
//!
//! ```bash
//! cargo run --release -p vesselgen --example synth_masks
//! ```

use vesselgen::commands::cmd_synth_data;
use vesselgen::metrics::{struct_report, DEFAULT_EMPTY_THRESHOLD, DEFAULT_WINDOW_RADIUS};
use vesselgen::synth::{generate_mask, VesselTreeConfig};

fn main() -> vesselgen::Result<()> {
    let out = std::path::Path::new("target/example-out/synth_masks");
    let cfg = VesselTreeConfig { seed: 2024, ..VesselTreeConfig::default() };

    let manifest = cmd_synth_data(&cfg, 25, out)?;
    println!("wrote {} masks to {}", manifest.count, out.display());
    println!("manifest digest: {}", manifest.digest());

    // render one mask as text and report its structure
    let mask = generate_mask(&cfg)?;
    for y in 0..mask.height() {
        let row: String = (0..mask.width())
            .map(|x| match (mask.artery.get(x, y), mask.vein.get(x, y)) {
                (true, true) => 'X',
                (true, false) => 'a',
                (false, true) => 'v',
                (false, false) => '.',
            })
            .collect();
        println!("{row}");
    }
    let report = struct_report(&mask, DEFAULT_WINDOW_RADIUS, DEFAULT_EMPTY_THRESHOLD)?;
    println!("artery: {:?}", report.artery);
    println!("vein:   {:?}", report.vein);
    println!("crossing pixels: {}", report.crossing_pixel_count);
    Ok(())
}
