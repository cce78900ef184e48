//! Builds dual-resolution TINs at several sampling rates from a surface fitted
//! to a clean scene, and writes the finest one as OBJ.

use flexroad::fit::{fit, initial_surface, FitConfig, LossWeights, SurfaceParams};
use flexroad::mesh::{build_tin, export_mesh, SamplingConfig};
use flexroad::metrics::mad;
use flexroad::synth::{generate, SceneSpec};

fn main() -> flexroad::Result<()> {
    let scene = generate(&SceneSpec::clean(1))?;
    let init = initial_surface(
        &scene.dsm,
        &scene.dtm,
        &scene.mask,
        &SurfaceParams::default(),
    )?;
    let (surface, _) = fit(
        &init,
        &scene.dsm,
        &scene.dtm,
        &scene.mask,
        &LossWeights::default(),
        &FitConfig::default(),
    )?;

    let mut last = None;
    for (road_rate, terrain_rate) in [(2.0, 20.0), (1.0, 10.0), (0.5, 5.0)] {
        let mesh = build_tin(
            &surface,
            &scene.mask,
            &SamplingConfig {
                road_rate,
                terrain_rate,
            },
        )?;
        println!(
            "road {road_rate} m / terrain {terrain_rate} m: {} vertices, {} triangles, MAD {:.3} deg",
            mesh.vertices().len(),
            mesh.triangle_count(),
            mad(&mesh)?
        );
        last = Some(mesh);
    }
    let path = std::env::temp_dir().join("flexroad_dynamic_mesh.obj");
    export_mesh(&last.unwrap(), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
