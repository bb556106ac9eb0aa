//! Structural metrics on hand-built shapes: what the skeleton graph sees in
//! a line, a Y-junction, a ring, and an artery/vein crossing.
//!
//! ```bash
//! cargo run --release -p vesselgen --example mask_metrics
//! ```

use vesselgen::mask::{AvMask, Bitmap};
use vesselgen::metrics::{
    auc, pixel_metrics, struct_report, DEFAULT_EMPTY_THRESHOLD, DEFAULT_WINDOW_RADIUS,
};

fn bitmap(rows: &[&str]) -> Bitmap {
    let mut b = Bitmap::new(rows[0].len(), rows.len());
    for (y, row) in rows.iter().enumerate() {
        for (x, ch) in row.chars().enumerate() {
            if ch == '#' {
                b.set(x, y, true);
            }
        }
    }
    b
}

fn artery_only(rows: &[&str]) -> AvMask {
    let a = bitmap(rows);
    let v = Bitmap::new(a.width(), a.height());
    AvMask::new(a, v).unwrap()
}

fn show(name: &str, mask: &AvMask) -> vesselgen::Result<()> {
    let r = struct_report(mask, DEFAULT_WINDOW_RADIUS, DEFAULT_EMPTY_THRESHOLD)?;
    println!(
        "{name:<16} components {} | branch points {} | loops {} | crossings {}",
        r.artery.component_count,
        r.artery.branch_point_count,
        r.artery.loop_count,
        r.crossing_pixel_count
    );
    Ok(())
}

fn main() -> vesselgen::Result<()> {
    show("line", &artery_only(&["........", "########", "........"]))?;
    show(
        "y junction",
        &artery_only(&[
            "#...#...",
            ".#.#....",
            "..#.....",
            "..#.....",
            "..#.....",
        ]),
    )?;
    show(
        "ring",
        &artery_only(&[".###.", "#...#", "#...#", ".###."]),
    )?;
    show(
        "two strokes",
        &artery_only(&["###....", ".......", "....###"]),
    )?;

    let mut artery = Bitmap::new(7, 7);
    let mut vein = Bitmap::new(7, 7);
    for i in 0..7 {
        artery.set(i, 3, true);
        vein.set(3, i, true);
    }
    show("a/v crossing", &AvMask::new(artery, vein)?)?;

    // pixel metrics of a prediction that misses half the vessel
    let gt = bitmap(&["########", "........"]);
    let pred = bitmap(&["####....", "........"]);
    let pm = pixel_metrics(&pred, &gt)?;
    println!(
        "\nhalf-missed line: accuracy {:?}, sensitivity {:?}, specificity {:?}",
        pm.accuracy, pm.sensitivity, pm.specificity
    );

    // AUC on a toy score vector
    let scores = [0.9, 0.8, 0.7, 0.55, 0.5, 0.4, 0.2, 0.1];
    let labels = [true, true, false, true, false, false, true, false];
    println!("toy AUC: {:.4}", auc(&scores, &labels)?);
    Ok(())
}
