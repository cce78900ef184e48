//! Writes and reads ESRI ASCII grids, resamples a coarse mask onto a finer
//! grid and pulls out road points.

use flexroad::grid::{
    extract_road_points, load_mask, load_raster, resample_mask, save_mask, save_raster,
    GridGeometry, Mask, Raster,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("flexroad_raster_io");
    std::fs::create_dir_all(&dir)?;

    let fine = GridGeometry::from_corner(40, 30, 0.5, 1000.0, 2000.0)?;
    let dsm = Raster::from_fn(fine, |i, j| {
        (i != 7 || j != 3).then_some(100.0 + 0.02 * i as f64)
    })?;
    save_raster(&dsm, dir.join("dsm.asc"))?;
    let back = load_raster(dir.join("dsm.asc"))?;
    println!(
        "round trip: {} of {} cells valid",
        back.valid_count(),
        back.geometry().len()
    );

    let coarse = GridGeometry::from_corner(20, 15, 1.0, 1000.0, 2000.0)?;
    let mask = Mask::from_fn(coarse, |_, j| (6..9).contains(&j));
    save_mask(&mask, dir.join("mask.asc"))?;
    let mask = resample_mask(&load_mask(dir.join("mask.asc"))?, &fine)?;
    let road = extract_road_points(&back, &mask)?;
    println!(
        "mask resampled to {} road cells, {} road points",
        mask.count_ones(),
        road.len()
    );
    println!("files in {}", dir.display());
    Ok(())
}
