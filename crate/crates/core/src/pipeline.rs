//! End-to-end orchestration: load rasters, clean the road mask, fit the
//! surface, build the TIN, score it, and write the artifacts.
//!
//! Configuration is TOML with one table per stage. Any key can be replaced
//! at runtime with [`PipelineConfig::set_key`], which is what the CLI's
//! `--set section.key=value` flag uses.

use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::filter::{run_filter, FilterParams};
use crate::fit::{fit, initial_surface, FitConfig, FitReport, LossWeights, SurfaceParams};
use crate::grid::{
    extract_road_points, load_mask, load_raster, resample_mask, save_mask, Mask, PointGrid, Raster,
};
use crate::mesh::{
    build_tin, export_mesh, fit_plane, plane_mesh, rgt_mesh, SamplingConfig, TinMesh,
};
use crate::metrics::{evaluate_all, metrics_csv, metrics_table, MetricReport};
use crate::nurbs::{save_surface, NurbsSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Grid,
    Filter,
    Fit,
    Mesh,
    Metrics,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Grid => "grid",
            Stage::Filter => "filter",
            Stage::Fit => "fit",
            Stage::Mesh => "mesh",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
        })
    }
}

/// A library error tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T> AtStage<T> for crate::error::Result<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|source| PipelineError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dsm: Option<PathBuf>,
    pub dtm: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Ground-truth road elevations (.asc, NODATA off the road).
    pub gt_road: Option<PathBuf>,
    /// Ground-truth terrain elevations (.asc, NODATA on the road).
    pub gt_terrain: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dsm: None,
            dtm: None,
            mask: None,
            gt_road: None,
            gt_terrain: None,
            output_dir: PathBuf::from("flexroad_out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub enabled: bool,
    pub theta_xy: f64,
    pub theta_z: f64,
    pub top_k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let p = FilterParams::default();
        Self {
            enabled: true,
            theta_xy: p.theta_xy,
            theta_z: p.theta_z,
            top_k: p.top_k,
        }
    }
}

impl FilterConfig {
    pub fn params(&self) -> FilterParams {
        FilterParams {
            theta_xy: self.theta_xy,
            theta_z: self.theta_z,
            top_k: self.top_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub enabled: bool,
    /// Also score the plane and regular-grid baselines.
    pub baselines: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            baselines: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub filter: FilterConfig,
    pub surface: SurfaceParams,
    pub loss: LossWeights,
    pub fit: FitConfig,
    pub sampling: SamplingConfig,
    pub metrics: MetricsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("config: {e}")))
            .at(Stage::Config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path, e))
            .at(Stage::Config)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.filter.params().validate().at(Stage::Config)?;
        self.loss.validate().at(Stage::Config)?;
        self.fit.validate().at(Stage::Config)?;
        self.sampling.validate().at(Stage::Config)?;
        let s = &self.surface;
        if s.control_u <= s.degree_u || s.control_v <= s.degree_v {
            return Err(Error::InvalidParameter(format!(
                "control grid {}x{} too small for degrees ({}, {})",
                s.control_u, s.control_v, s.degree_u, s.degree_v
            )))
            .at(Stage::Config);
        }
        Ok(())
    }

    /// Sets `section.key` from its textual value. Values are read as TOML
    /// literals, falling back to a plain string (handy for paths).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let bad = |m: String| Err(Error::InvalidParameter(m)).at(Stage::Config);
        let Some((section, field)) = key.split_once('.') else {
            return bad(format!("override key {key:?} must look like section.key"));
        };
        let mut root = toml::Table::try_from(&*self).expect("config serializes to a table");
        let Some(toml::Value::Table(table)) = root.get_mut(section) else {
            return bad(format!("unknown config section {section:?}"));
        };
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        // Integers are accepted where floats are expected.
        let parsed = match (table.get(field), parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(field.to_string(), parsed);
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| {
                Error::InvalidParameter(format!("override {key}={value}: {e}"))
            })
            .at(Stage::Config)?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Applies `section.key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), PipelineError> {
        for o in overrides {
            let o = o.as_ref();
            let Some((k, v)) = o.split_once('=') else {
                return Err(Error::InvalidParameter(format!(
                    "override {o:?} must look like section.key=value"
                )))
                .at(Stage::Config);
            };
            self.set_key(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

/// Rasters and ground truth for one tile.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub dsm: Raster,
    pub dtm: Raster,
    pub mask: Mask,
    pub gt_road: Option<PointGrid>,
    pub gt_terrain: Option<PointGrid>,
}

fn require_path<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, PipelineError> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidParameter(format!("paths.{name} is not set")))
        .at(Stage::Config)
}

/// Reads the rasters named in the config. Ground truth is optional.
pub fn load_inputs(config: &PipelineConfig) -> Result<PipelineInputs, PipelineError> {
    let paths = &config.paths;
    let dsm = load_raster(require_path(&paths.dsm, "dsm")?).at(Stage::Grid)?;
    let dtm = load_raster(require_path(&paths.dtm, "dtm")?).at(Stage::Grid)?;
    let mask = load_mask(require_path(&paths.mask, "mask")?).at(Stage::Grid)?;
    let gt = |p: &Option<PathBuf>| -> Result<Option<PointGrid>, PipelineError> {
        p.as_ref()
            .map(|p| load_raster(p).map(|r| PointGrid::from_raster(&r, |_, _| true)))
            .transpose()
            .at(Stage::Grid)
    };
    Ok(PipelineInputs {
        gt_road: gt(&paths.gt_road)?,
        gt_terrain: gt(&paths.gt_terrain)?,
        dsm,
        dtm,
        mask,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Input mask resampled onto the DSM grid.
    pub mask: Mask,
    /// Cleaned road mask (equal to `mask` ∧ valid DSM when filtering is off).
    pub mask_plus: Mask,
    /// Cleaned road points.
    pub road_points: PointGrid,
    pub surface: NurbsSurface,
    pub fit_report: FitReport,
    /// TIN with a per-vertex vertical error attribute when ground truth exists.
    pub mesh: TinMesh,
    pub metrics: Option<MetricReport>,
}

/// Ground truth for scoring: supplied sets, else DTM cells on and off the
/// original road mask.
fn ground_truth(inputs: &PipelineInputs, mask: &Mask) -> (PointGrid, PointGrid) {
    let road = inputs
        .gt_road
        .clone()
        .unwrap_or_else(|| PointGrid::from_raster(&inputs.dtm, |i, j| mask.get(i, j)));
    let terrain = inputs
        .gt_terrain
        .clone()
        .unwrap_or_else(|| PointGrid::from_raster(&inputs.dtm, |i, j| !mask.get(i, j)));
    (road, terrain)
}

/// Absolute vertical offset of each vertex from the ground-truth cell under it.
fn vertex_errors(mesh: &TinMesh, road: &PointGrid, terrain: &PointGrid) -> Vec<f64> {
    let mut truth = road.to_raster();
    for p in terrain.iter() {
        if truth.get(p.i, p.j).is_none() && truth.geometry().same_shape(terrain.geometry()) {
            truth.set(p.i, p.j, Some(p.z));
        }
    }
    let g = *truth.geometry();
    mesh.vertices()
        .iter()
        .map(|v| {
            let (i, j) = g.nearest_cell(v[0], v[1]);
            truth.get(i, j).map_or(0.0, |z| (v[2] - z).abs())
        })
        .collect()
}

/// Runs every stage on in-memory inputs. Nothing is written to disk.
pub fn run(
    config: &PipelineConfig,
    inputs: &PipelineInputs,
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    let g = *inputs.dsm.geometry();
    g.require_same_shape(inputs.dtm.geometry(), "DSM vs DTM")
        .at(Stage::Grid)?;
    let mask = resample_mask(&inputs.mask, &g).at(Stage::Grid)?;
    let points = extract_road_points(&inputs.dsm, &mask).at(Stage::Grid)?;
    info!("road points: {}", points.len());

    let (road_points, mask_plus) = if config.filter.enabled {
        let out = run_filter(&points, &config.filter.params()).at(Stage::Filter)?;
        info!(
            "filter kept {} of {} road points",
            out.points.len(),
            points.len()
        );
        (out.points, out.mask)
    } else {
        let m = points.occupancy();
        (points, m)
    };

    let init =
        initial_surface(&inputs.dsm, &inputs.dtm, &mask_plus, &config.surface).at(Stage::Fit)?;
    let (surface, fit_report) = fit(
        &init,
        &inputs.dsm,
        &inputs.dtm,
        &mask_plus,
        &config.loss,
        &config.fit,
    )
    .at(Stage::Fit)?;
    info!(
        "fit: {} iterations, loss {:.6} -> {:.6} ({})",
        fit_report.iterations,
        fit_report.initial.total,
        fit_report.best.total,
        fit_report.stop_reason
    );

    let mut mesh = build_tin(&surface, &mask_plus, &config.sampling).at(Stage::Mesh)?;
    info!("mesh: {} triangles", mesh.triangle_count());

    let metrics = if config.metrics.enabled {
        let (gt_road, gt_terrain) = ground_truth(inputs, &mask);
        let report = evaluate_all(&mesh, &gt_road, &gt_terrain, &mask_plus).at(Stage::Metrics)?;
        let errors = vertex_errors(&mesh, &gt_road, &gt_terrain);
        mesh = mesh.with_attributes(errors).at(Stage::Metrics)?;
        Some(report)
    } else {
        None
    };

    Ok(PipelineOutput {
        mask,
        mask_plus,
        road_points,
        surface,
        fit_report,
        mesh,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineReports {
    pub plane: MetricReport,
    pub rgt: MetricReport,
}

/// Scores the plane fit of the cleaned road points and the regular-grid
/// triangulation of the DSM against the same ground truth.
pub fn run_baselines(
    inputs: &PipelineInputs,
    output: &PipelineOutput,
) -> Result<BaselineReports, PipelineError> {
    let (gt_road, gt_terrain) = ground_truth(inputs, &output.mask);
    let plane = fit_plane(&output.road_points).at(Stage::Mesh)?;
    let plane_tin = plane_mesh(&plane, &inputs.dsm.geometry().extent()).at(Stage::Mesh)?;
    let rgt = rgt_mesh(&inputs.dsm).at(Stage::Mesh)?;
    Ok(BaselineReports {
        plane: evaluate_all(&plane_tin, &gt_road, &gt_terrain, &output.mask_plus)
            .at(Stage::Metrics)?,
        rgt: evaluate_all(&rgt, &gt_road, &gt_terrain, &output.mask_plus).at(Stage::Metrics)?,
    })
}

/// Files written by [`run_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub cleaned_mask: PathBuf,
    pub surface: PathBuf,
    pub mesh: PathBuf,
    pub loss_trace: PathBuf,
    pub metrics_csv: Option<PathBuf>,
    pub metrics_table: Option<PathBuf>,
}

/// Loads the configured inputs, runs all stages and writes the artifacts
/// into `paths.output_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
) -> Result<(PipelineOutput, Option<BaselineReports>, Artifacts), PipelineError> {
    let inputs = load_inputs(config)?;
    let output = run(config, &inputs)?;
    let baselines = if config.metrics.enabled && config.metrics.baselines {
        Some(run_baselines(&inputs, &output)?)
    } else {
        None
    };
    let artifacts = write_artifacts(&config.paths.output_dir, &output, baselines.as_ref())?;
    Ok((output, baselines, artifacts))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text)
        .map_err(|e| Error::io(path, e))
        .at(Stage::Output)
}

pub fn write_artifacts(
    dir: &Path,
    output: &PipelineOutput,
    baselines: Option<&BaselineReports>,
) -> Result<Artifacts, PipelineError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir, e))
        .at(Stage::Output)?;
    let a = Artifacts {
        cleaned_mask: dir.join("mask_clean.asc"),
        surface: dir.join("surface.nurbs"),
        mesh: dir.join("mesh.obj"),
        loss_trace: dir.join("loss_trace.csv"),
        metrics_csv: output.metrics.map(|_| dir.join("metrics.csv")),
        metrics_table: output.metrics.map(|_| dir.join("metrics.txt")),
    };
    save_mask(&output.mask_plus, &a.cleaned_mask).at(Stage::Output)?;
    save_surface(&output.surface, &a.surface).at(Stage::Output)?;
    export_mesh(&output.mesh, &a.mesh).at(Stage::Output)?;
    write_text(&a.loss_trace, &output.fit_report.to_csv())?;
    if let (Some(m), Some(csv), Some(txt)) = (output.metrics, &a.metrics_csv, &a.metrics_table) {
        let mut rows = vec![("FlexRoad", m)];
        if let Some(b) = baselines {
            rows.push(("Plane", b.plane));
            rows.push(("RGT", b.rgt));
        }
        write_text(csv, &metrics_csv(&rows))?;
        write_text(txt, &metrics_table(&rows))?;
    }
    Ok(a)
}

/// One row of an ablation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub report: MetricReport,
}

/// Re-runs the pipeline once per value of `key` (a `section.key` config
/// path) and collects the metrics.
pub fn ablate(
    config: &PipelineConfig,
    inputs: &PipelineInputs,
    key: &str,
    values: &[String],
) -> Result<Vec<AblationRow>, PipelineError> {
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut cfg = config.clone();
        cfg.metrics.enabled = true;
        cfg.set_key(key, v)?;
        let out = run(&cfg, inputs)?;
        rows.push(AblationRow {
            value: v.clone(),
            report: out.metrics.expect("metrics enabled"),
        });
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str =
    "parameter,value,l2_road_m,l2_terrain_m,mad_road_deg,mad_terrain_deg,triangles";

pub fn ablation_csv(key: &str, rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.report;
        s.push_str(&format!(
            "{key},{},{},{},{},{},{}\n",
            r.value, m.l2_road, m.l2_terrain, m.mad_road, m.mad_terrain, m.triangle_count
        ));
    }
    s
}
