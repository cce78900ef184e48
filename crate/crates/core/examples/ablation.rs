//! Sweeps the elevation threshold and the sampling rates on the standard
//! scene and prints CSV tables.

use flexroad::pipeline::{ablate, ablation_csv, PipelineConfig, PipelineInputs};
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
    let config = PipelineConfig::default();
    let sweeps: [(&str, &[&str]); 3] = [
        ("filter.theta_z", &["0.1", "0.5", "10.0"]),
        ("surface.control_u", &["20", "35", "50"]),
        ("sampling.terrain_rate", &["5", "10", "20"]),
    ];
    for (key, values) in sweeps {
        let values: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        let rows = ablate(&config, &inputs, key, &values)?;
        println!("{}", ablation_csv(key, &rows));
    }
    Ok(())
}
