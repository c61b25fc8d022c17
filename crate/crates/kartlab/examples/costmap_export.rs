//! Builds the oval-track cost field and exports it as a grayscale PGM
//! image (white = on the racing band, black = off track) plus a JSON
//! sidecar with the grid geometry.
//!
//! ```bash
//! cargo run --release --example costmap_export -- /tmp/oval.pgm
//! ```

use kartlab::costmap::{build_oval_costmap, TrackSpec};

fn main() -> kartlab::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "oval_costmap.pgm".to_string());
    let spec = TrackSpec::default();
    let costmap = build_oval_costmap(&spec, 0.02)?;
    println!(
        "oval: straights {} m, radius {} m, lap length {:.2} m",
        spec.straight_len,
        spec.radius,
        spec.lap_length()
    );
    println!(
        "grid: {}x{} cells at {} m/cell",
        costmap.width, costmap.height, costmap.resolution
    );
    for (label, x, y) in [
        ("centerline", 0.0, spec.radius),
        ("band edge", 0.0, spec.radius + spec.half_width),
        ("mid ramp", 0.0, spec.radius + spec.half_width + spec.ramp_width / 2.0),
        ("off track", 0.0, spec.radius + 1.2),
        ("infield", 0.0, 0.0),
    ] {
        println!("cost at {label:>10} ({x:.2}, {y:.2}): {:.3}", costmap.track_cost(x, y));
    }
    costmap.save_pgm(std::path::Path::new(&path))?;
    println!("wrote {path} and sidecar");
    Ok(())
}
