//! Runs the clustering filter on the standard scene and scores it against
//! the generator's per-cell provenance.

use flexroad::filter::{get_neighbors, grow_regions, merge_clusters, run_filter, FilterParams};
use flexroad::grid::extract_road_points;
use flexroad::synth::{generate, SceneSpec};

fn main() -> flexroad::Result<()> {
    let scene = generate(&SceneSpec::standard(7))?;
    let points = extract_road_points(&scene.dsm, &scene.mask)?;
    let params = FilterParams::default();

    let grown = grow_regions(&points, &get_neighbors(&points, params.theta_z));
    let merged = merge_clusters(&points, &grown, params.theta_xy, params.theta_z);
    println!(
        "{} road points -> {} regions -> {} clusters after merging",
        points.len(),
        grown.count(),
        merged.count()
    );

    let out = run_filter(&points, &params)?;
    let (mut noise, mut removed, mut road, mut kept) = (0, 0, 0, 0);
    for (k, p) in scene.provenance.iter().enumerate() {
        if !scene.mask.bits()[k] {
            continue;
        }
        let survives = out.mask.bits()[k];
        if p.is_object() {
            noise += 1;
            removed += usize::from(!survives);
        } else if scene.road_footprint.bits()[k] {
            road += 1;
            kept += usize::from(survives);
        }
    }
    println!("noise cells removed: {removed}/{noise}");
    println!("clean road cells kept: {kept}/{road}");
    Ok(())
}
