//! Generates the standard noisy scene and reports what went into it.

use flexroad::synth::{generate, Provenance, SceneSpec};

fn main() -> flexroad::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(7);
    let spec = SceneSpec::standard(seed);
    let scene = generate(&spec)?;
    let g = scene.dsm.geometry();

    let mut counts = [0usize; 5];
    for p in &scene.provenance {
        counts[p.code() as usize] += 1;
    }
    println!(
        "seed {seed}: {}x{} cells, road width {:.2} m",
        g.width, g.height, scene.road_width
    );
    println!(
        "road footprint {:.1}% of tile, mask {:.1}%",
        100.0 * scene.road_footprint.count_ones() as f64 / g.len() as f64,
        100.0 * scene.mask.count_ones() as f64 / g.len() as f64
    );
    for (p, name) in [
        (Provenance::Vehicle, "vehicle"),
        (Provenance::Tree, "tree"),
        (Provenance::Facade, "facade"),
    ] {
        println!("{name:>8} cells: {}", counts[p.code() as usize]);
    }
    println!(
        "GT points: {} road, {} terrain",
        scene.gt_road.len(),
        scene.gt_terrain.len()
    );
    println!("\n{}", spec.to_toml());
    Ok(())
}
