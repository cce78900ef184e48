//! Full pipeline on the standard scene compared with the plane and regular
//! grid baselines.

use flexroad::metrics::metrics_table;
use flexroad::pipeline::{run, run_baselines, PipelineConfig, PipelineInputs};
use flexroad::synth::{generate, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = generate(&SceneSpec::standard(7))?;
    let inputs = PipelineInputs {
        dsm: scene.dsm,
        dtm: scene.dtm,
        mask: scene.mask,
        gt_road: Some(scene.gt_road),
        gt_terrain: Some(scene.gt_terrain),
    };
    let output = run(&PipelineConfig::default(), &inputs)?;
    let b = run_baselines(&inputs, &output)?;
    let rows = [
        ("FlexRoad", output.metrics.expect("metrics on by default")),
        ("Plane", b.plane),
        ("RGT", b.rgt),
    ];
    print!("{}", metrics_table(&rows));
    Ok(())
}
