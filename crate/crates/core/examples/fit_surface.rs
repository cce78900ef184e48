//! Fits a NURBS surface to the filtered standard scene and prints the loss trace.

use flexroad::filter::{run_filter, FilterParams};
use flexroad::fit::{fit, initial_surface, FitConfig, LossWeights, SurfaceParams};
use flexroad::grid::extract_road_points;
use flexroad::synth::{generate, SceneSpec};

fn main() -> flexroad::Result<()> {
    let scene = generate(&SceneSpec::standard(7))?;
    let points = extract_road_points(&scene.dsm, &scene.mask)?;
    let mask_plus = run_filter(&points, &FilterParams::default())?.mask;

    let params = SurfaceParams::default();
    let init = initial_surface(&scene.dsm, &scene.dtm, &mask_plus, &params)?;
    let (surface, report) = fit(
        &init,
        &scene.dsm,
        &scene.dtm,
        &mask_plus,
        &LossWeights::default(),
        &FitConfig::default(),
    )?;

    for (it, l) in std::iter::once(&report.initial)
        .chain(&report.history)
        .enumerate()
        .step_by(20)
    {
        println!(
            "iter {it:>3}: total {:.5} road {:.5} terrain {:.5} reg {:.5}",
            l.total, l.road, l.terrain, l.reg
        );
    }
    println!(
        "stopped after {} iterations ({}), best at {}: {:.5}",
        report.iterations, report.stop_reason, report.best_iteration, report.best.total
    );
    let (x, y) = (50.0, 50.0);
    println!(
        "surface at ({x}, {y}): {:.3} m, terrain {:.3} m",
        surface.elevation_at(x, y)?,
        scene.dtm.get(50, 50).unwrap_or(f64::NAN)
    );
    Ok(())
}
