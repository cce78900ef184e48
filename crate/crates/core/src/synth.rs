//! Seeded synthetic road scenes with known ground truth.
//!
//! The bare terrain is a sum of Gaussian hills on an optional linear grade.
//! A road ribbon follows a polyline. The DSM adds vehicles on the road,
//! tree columns and facade strips beside it, and per-cell jitter. Every cell
//! carries a provenance label so filtering quality can be scored exactly.
//!
//! Scene specs are TOML:
//!
//! ```toml
//! seed = 7
//! tile_size = 100.0
//! cell_size = 1.0
//! slope = [1.0, 0.5]            # percent grade in x and y
//! jitter_sigma = 0.05
//! mask_dilation = 4             # 0 leaves the mask uncorrupted
//! road_fraction = 0.18          # optional, overrides road.width
//!
//! [[hills]]
//! x = 30.0
//! y = 60.0
//! amplitude = 1.8
//! sigma = 35.0
//!
//! [road]
//! width = 12.0
//! polyline = [[0.0, 30.0], [50.0, 50.0], [100.0, 70.0]]
//!
//! [vehicles]
//! count = 20
//! [trees]
//! count = 10
//! [facades]
//! count = 2
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, Mask, PointGrid, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hill {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub width: f64,
    pub polyline: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSpec {
    pub count: usize,
    pub width: f64,
    pub length: f64,
    pub height: [f64; 2],
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            count: 0,
            width: 2.0,
            length: 4.5,
            height: [1.5, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeSpec {
    pub count: usize,
    pub radius: [f64; 2],
    pub height: [f64; 2],
    /// Gap between the canopy edge and the road edge.
    pub gap: [f64; 2],
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            count: 0,
            radius: [1.5, 3.0],
            height: [5.0, 15.0],
            gap: [1.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FacadeSpec {
    pub count: usize,
    pub length: [f64; 2],
    pub thickness: [f64; 2],
    pub height: [f64; 2],
    pub gap: [f64; 2],
}

impl Default for FacadeSpec {
    fn default() -> Self {
        Self {
            count: 0,
            length: [15.0, 30.0],
            thickness: [2.0, 4.0],
            height: [8.0, 20.0],
            gap: [2.0, 6.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub seed: u64,
    pub tile_size: f64,
    pub cell_size: f64,
    #[serde(default)]
    pub hills: Vec<Hill>,
    /// Linear grade in percent along x and y.
    #[serde(default)]
    pub slope: [f64; 2],
    pub road: RoadSpec,
    /// When set, the road width is chosen so this fraction of cells is road.
    #[serde(default)]
    pub road_fraction: Option<f64>,
    #[serde(default)]
    pub vehicles: VehicleSpec,
    #[serde(default)]
    pub trees: TreeSpec,
    #[serde(default)]
    pub facades: FacadeSpec,
    #[serde(default)]
    pub jitter_sigma: f64,
    /// Trees and facades within this many cells of the road are added to
    /// the road mask, mimicking segmentation spill-over. 0 disables it.
    #[serde(default)]
    pub mask_dilation: usize,
}

impl SceneSpec {
    /// 100 m tile at 1 m cells with an S-shaped road covering 18% of the
    /// tile, 20 vehicles, 10 trees, 2 facades, 0.05 m jitter and a
    /// spill-over mask.
    ///
    /// The hills keep the road grade under about 7%. A vehicle roof then
    /// sits more than 0.5 m above every road cell within 10 m, so the
    /// default filter thresholds can separate it from the road.
    pub fn standard(seed: u64) -> Self {
        Self {
            seed,
            tile_size: 100.0,
            cell_size: 1.0,
            hills: vec![
                Hill {
                    x: 25.0,
                    y: 70.0,
                    amplitude: 1.8,
                    sigma: 30.0,
                },
                Hill {
                    x: 80.0,
                    y: 25.0,
                    amplitude: -1.2,
                    sigma: 25.0,
                },
                Hill {
                    x: 60.0,
                    y: 85.0,
                    amplitude: 0.9,
                    sigma: 20.0,
                },
            ],
            slope: [1.0, 0.5],
            road: RoadSpec {
                width: 12.0,
                polyline: vec![[0.0, 28.0], [30.0, 40.0], [65.0, 58.0], [100.0, 66.0]],
            },
            road_fraction: Some(0.18),
            vehicles: VehicleSpec {
                count: 20,
                ..Default::default()
            },
            trees: TreeSpec {
                count: 10,
                ..Default::default()
            },
            facades: FacadeSpec {
                count: 2,
                ..Default::default()
            },
            jitter_sigma: 0.05,
            mask_dilation: 4,
        }
    }

    /// The standard layout with every noise source switched off.
    pub fn clean(seed: u64) -> Self {
        let mut s = Self::standard(seed);
        s.vehicles.count = 0;
        s.trees.count = 0;
        s.facades.count = 0;
        s.jitter_sigma = 0.0;
        s.mask_dilation = 0;
        s
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("scene spec: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.cell_size > 0.0) || !(self.tile_size >= 2.0 * self.cell_size) {
            return bad(format!(
                "tile_size ({}) must hold at least 2 cells of size {}",
                self.tile_size, self.cell_size
            ));
        }
        if self.road.polyline.len() < 2 {
            return bad("road polyline needs at least 2 points".into());
        }
        for p in &self.road.polyline {
            if !(0.0..=self.tile_size).contains(&p[0]) || !(0.0..=self.tile_size).contains(&p[1]) {
                return bad(format!(
                    "road point ({}, {}) lies outside the tile",
                    p[0], p[1]
                ));
            }
        }
        if !(self.road.width > 0.0) {
            return bad("road width must be > 0".into());
        }
        if let Some(f) = self.road_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("road_fraction {f} must lie in (0, 1)"));
            }
        }
        if !(self.jitter_sigma >= 0.0) {
            return bad("jitter_sigma must be >= 0".into());
        }
        for h in &self.hills {
            if !(h.sigma > 0.0) {
                return bad("hill sigma must be > 0".into());
            }
        }
        let ranges = [
            ("vehicle height", self.vehicles.height),
            ("tree radius", self.trees.radius),
            ("tree height", self.trees.height),
            ("tree gap", self.trees.gap),
            ("facade length", self.facades.length),
            ("facade thickness", self.facades.thickness),
            ("facade height", self.facades.height),
            ("facade gap", self.facades.gap),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo >= 0.0 && hi >= lo) {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if !(self.vehicles.width > 0.0 && self.vehicles.length > 0.0) {
            return bad("vehicle footprint must be positive".into());
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        let n = (self.tile_size / self.cell_size).round() as usize;
        GridGeometry::from_corner(n, n, self.cell_size, 0.0, 0.0)
    }

    /// Noise-free terrain elevation at a world position.
    pub fn base_elevation(&self, x: f64, y: f64) -> f64 {
        let mut z = 0.01 * (self.slope[0] * x + self.slope[1] * y);
        for h in &self.hills {
            let r2 = (x - h.x).powi(2) + (y - h.y).powi(2);
            z += h.amplitude * (-r2 / (2.0 * h.sigma * h.sigma)).exp();
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Clean,
    Jitter,
    Vehicle,
    Tree,
    Facade,
}

impl Provenance {
    pub fn code(self) -> u8 {
        match self {
            Provenance::Clean => 0,
            Provenance::Jitter => 1,
            Provenance::Vehicle => 2,
            Provenance::Tree => 3,
            Provenance::Facade => 4,
        }
    }

    pub fn is_object(self) -> bool {
        matches!(
            self,
            Provenance::Vehicle | Provenance::Tree | Provenance::Facade
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dsm: Raster,
    pub dtm: Raster,
    /// Road segmentation as delivered to the pipeline (possibly corrupted).
    pub mask: Mask,
    /// Cells actually covered by the road ribbon.
    pub road_footprint: Mask,
    pub gt_road: PointGrid,
    pub gt_terrain: PointGrid,
    pub provenance: Vec<Provenance>,
    /// Road width after any fraction targeting.
    pub road_width: f64,
}

impl Scene {
    pub fn provenance_at(&self, i: usize, j: usize) -> Provenance {
        self.provenance[self.dsm.geometry().index(i, j)]
    }

    /// Provenance codes (0 clean, 1 jitter, 2 vehicle, 3 tree, 4 facade) as a raster.
    pub fn provenance_raster(&self) -> Raster {
        let g = *self.dsm.geometry();
        Raster::new(g, self.provenance.iter().map(|p| p.code() as f64).collect())
            .expect("shape matches")
    }
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

fn distance_to_polyline(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    line.windows(2)
        .map(|w| distance_to_segment(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn road_footprint(g: &GridGeometry, road: &RoadSpec, width: f64) -> Mask {
    Mask::from_fn(*g, |i, j| {
        let (x, y) = g.cell_to_world(i, j);
        distance_to_polyline([x, y], &road.polyline) <= 0.5 * width
    })
}

/// Width whose footprint covers `fraction` of the cells (bisection).
fn width_for_fraction(g: &GridGeometry, road: &RoadSpec, fraction: f64) -> f64 {
    let dist: Vec<f64> = (0..g.len())
        .map(|k| {
            let (i, j) = g.cell_of_index(k);
            let (x, y) = g.cell_to_world(i, j);
            distance_to_polyline([x, y], &road.polyline)
        })
        .collect();
    let target = fraction * g.len() as f64;
    let (mut lo, mut hi) = (0.0, 2.0 * (g.extent().width() + g.extent().height()));
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let covered = dist.iter().filter(|&&d| d <= 0.5 * mid).count() as f64;
        if covered < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Position and unit direction at arc length `s` along the polyline.
fn point_along(line: &[[f64; 2]], mut s: f64) -> ([f64; 2], [f64; 2]) {
    for w in line.windows(2) {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        let len = dx.hypot(dy);
        if len == 0.0 {
            continue;
        }
        if s <= len {
            return (
                [w[0][0] + dx * s / len, w[0][1] + dy * s / len],
                [dx / len, dy / len],
            );
        }
        s -= len;
    }
    let n = line.len();
    let (a, b) = (line[n - 2], line[n - 1]);
    let len = (b[0] - a[0]).hypot(b[1] - a[1]).max(f64::MIN_POSITIVE);
    (b, [(b[0] - a[0]) / len, (b[1] - a[1]) / len])
}

fn polyline_length(line: &[[f64; 2]]) -> f64 {
    line.windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Cells whose centers fall inside an oriented rectangle.
fn rectangle_cells(
    g: &GridGeometry,
    center: [f64; 2],
    dir: [f64; 2],
    half_len: f64,
    half_wid: f64,
) -> Vec<usize> {
    let reach = half_len.hypot(half_wid);
    disc_candidates(g, center, reach)
        .filter(|&k| {
            let (i, j) = g.cell_of_index(k);
            let (x, y) = g.cell_to_world(i, j);
            let (dx, dy) = (x - center[0], y - center[1]);
            let along = dx * dir[0] + dy * dir[1];
            let across = -dx * dir[1] + dy * dir[0];
            along.abs() <= half_len && across.abs() <= half_wid
        })
        .collect()
}

fn disc_cells(g: &GridGeometry, center: [f64; 2], radius: f64) -> Vec<usize> {
    disc_candidates(g, center, radius)
        .filter(|&k| {
            let (i, j) = g.cell_of_index(k);
            let (x, y) = g.cell_to_world(i, j);
            (x - center[0]).hypot(y - center[1]) <= radius
        })
        .collect()
}

/// Cell indices inside the bounding box of a disc.
fn disc_candidates(g: &GridGeometry, c: [f64; 2], r: f64) -> impl Iterator<Item = usize> + '_ {
    let (i0, j0) = g.nearest_cell(c[0] - r, c[1] - r);
    let (i1, j1) = g.nearest_cell(c[0] + r, c[1] + r);
    (j0..=j1).flat_map(move |j| (i0..=i1).map(move |i| g.index(i, j)))
}

struct Object {
    cells: Vec<usize>,
    height: f64,
    kind: Provenance,
}

/// Generates a scene. Identical specs give bit-identical scenes.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let g = spec.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let width = match spec.road_fraction {
        Some(f) => width_for_fraction(&g, &spec.road, f),
        None => spec.road.width,
    };
    let footprint = road_footprint(&g, &spec.road, width);
    let dtm = Raster::from_fn(g, |i, j| {
        let (x, y) = g.cell_to_world(i, j);
        Some(spec.base_elevation(x, y))
    })?;

    let line = &spec.road.polyline;
    let length = polyline_length(line);
    let mut occupied = vec![false; g.len()];
    let mut objects: Vec<Object> = Vec::new();
    let max_attempts = 200;

    let v = &spec.vehicles;
    let lateral = (0.5 * width - 0.5 * v.width - 0.5).max(0.0);
    for _ in 0..v.count {
        for _ in 0..max_attempts {
            let (p, dir) = point_along(line, rng.gen_range(0.0..length));
            let off = if lateral > 0.0 {
                rng.gen_range(-lateral..lateral)
            } else {
                0.0
            };
            let height = rng.gen_range(v.height[0]..=v.height[1]);
            let c = [p[0] - dir[1] * off, p[1] + dir[0] * off];
            let cells = rectangle_cells(&g, c, dir, 0.5 * v.length, 0.5 * v.width);
            // Keep vehicles apart and fully on the road.
            let clear = !cells.is_empty()
                && cells.iter().all(|&k| footprint.bits()[k] && !occupied[k])
                && cells.iter().all(|&k| {
                    let (i, j) = g.cell_of_index(k);
                    neighbors8(&g, i, j).all(|n| !occupied[n])
                });
            if clear {
                mark(&mut occupied, &cells);
                objects.push(Object {
                    cells,
                    height,
                    kind: Provenance::Vehicle,
                });
                break;
            }
        }
    }

    let t = &spec.trees;
    for _ in 0..t.count {
        for _ in 0..max_attempts {
            let (p, dir) = point_along(line, rng.gen_range(0.0..length));
            let radius = rng.gen_range(t.radius[0]..=t.radius[1]);
            let gap = rng.gen_range(t.gap[0]..=t.gap[1]);
            let height = rng.gen_range(t.height[0]..=t.height[1]);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let off = side * (0.5 * width + gap + radius);
            let c = [p[0] - dir[1] * off, p[1] + dir[0] * off];
            if let Some(cells) =
                off_road_cells(&g, &footprint, &occupied, disc_cells(&g, c, radius))
            {
                mark(&mut occupied, &cells);
                objects.push(Object {
                    cells,
                    height,
                    kind: Provenance::Tree,
                });
                break;
            }
        }
    }

    let f = &spec.facades;
    for _ in 0..f.count {
        for _ in 0..max_attempts {
            let (p, dir) = point_along(line, rng.gen_range(0.0..length));
            let len = rng.gen_range(f.length[0]..=f.length[1]);
            let thick = rng.gen_range(f.thickness[0]..=f.thickness[1]);
            let gap = rng.gen_range(f.gap[0]..=f.gap[1]);
            let height = rng.gen_range(f.height[0]..=f.height[1]);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let off = side * (0.5 * width + gap + 0.5 * thick);
            let c = [p[0] - dir[1] * off, p[1] + dir[0] * off];
            let cells = rectangle_cells(&g, c, dir, 0.5 * len, 0.5 * thick);
            if let Some(cells) = off_road_cells(&g, &footprint, &occupied, cells) {
                mark(&mut occupied, &cells);
                objects.push(Object {
                    cells,
                    height,
                    kind: Provenance::Facade,
                });
                break;
            }
        }
    }

    let mut provenance = vec![Provenance::Clean; g.len()];
    let mut dsm_values = dtm.values().to_vec();
    for o in &objects {
        for &k in &o.cells {
            dsm_values[k] += o.height;
            provenance[k] = o.kind;
        }
    }
    if spec.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.jitter_sigma)
            .map_err(|e| Error::InvalidParameter(format!("jitter_sigma: {e}")))?;
        for (k, z) in dsm_values.iter_mut().enumerate() {
            *z += normal.sample(&mut rng);
            if provenance[k] == Provenance::Clean {
                provenance[k] = Provenance::Jitter;
            }
        }
    }
    let dsm = Raster::new(g, dsm_values)?;

    let mut mask = footprint.clone();
    if spec.mask_dilation > 0 {
        let reach = dilate(&footprint, spec.mask_dilation);
        for o in objects.iter().filter(|o| o.kind != Provenance::Vehicle) {
            if o.cells.iter().any(|&k| reach.bits()[k]) {
                for &k in &o.cells {
                    let (i, j) = g.cell_of_index(k);
                    mask.set(i, j, true);
                }
            }
        }
    }

    let gt_road = PointGrid::from_raster(&dtm, |i, j| footprint.get(i, j));
    let gt_terrain = PointGrid::from_raster(&dtm, |i, j| !footprint.get(i, j));
    Ok(Scene {
        dsm,
        dtm,
        mask,
        road_footprint: footprint,
        gt_road,
        gt_terrain,
        provenance,
        road_width: width,
    })
}

fn neighbors8(g: &GridGeometry, i: usize, j: usize) -> impl Iterator<Item = usize> + '_ {
    (-1i64..=1)
        .flat_map(move |dj| (-1i64..=1).map(move |di| (di, dj)))
        .filter_map(move |(di, dj)| {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            (a >= 0 && b >= 0 && (a as usize) < g.width && (b as usize) < g.height)
                .then(|| g.index(a as usize, b as usize))
        })
}

fn mark(occupied: &mut [bool], cells: &[usize]) {
    for &k in cells {
        occupied[k] = true;
    }
}

/// Accepts a footprint only if it is non-empty, avoids the road and its
/// 8-neighborhood, and does not overlap earlier objects.
fn off_road_cells(
    g: &GridGeometry,
    road: &Mask,
    occupied: &[bool],
    cells: Vec<usize>,
) -> Option<Vec<usize>> {
    if cells.is_empty() {
        return None;
    }
    let ok = cells.iter().all(|&k| {
        let (i, j) = g.cell_of_index(k);
        !occupied[k] && neighbors8(g, i, j).all(|n| !road.bits()[n])
    });
    ok.then_some(cells)
}

/// Chebyshev dilation by `r` cells.
fn dilate(mask: &Mask, r: usize) -> Mask {
    let g = *mask.geometry();
    let r = r as i64;
    Mask::from_fn(g, |i, j| {
        for dj in -r..=r {
            for di in -r..=r {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a >= 0
                    && b >= 0
                    && (a as usize) < g.width
                    && (b as usize) < g.height
                    && mask.get(a as usize, b as usize)
                {
                    return true;
                }
            }
        }
        false
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_scene_is_clean() {
        let s = generate(&SceneSpec::clean(3)).unwrap();
        assert_eq!(s.dsm, s.dtm);
        assert!(s.provenance.iter().all(|&p| p == Provenance::Clean));
        assert_eq!(s.mask, s.road_footprint);
    }

    #[test]
    fn vehicles_are_exactly_the_raised_cells() {
        let mut spec = SceneSpec::clean(5);
        spec.vehicles.count = 20;
        let s = generate(&spec).unwrap();
        let g = *s.dsm.geometry();
        let mut raised = 0;
        for k in 0..g.len() {
            let diff = s.dsm.values()[k] - s.dtm.values()[k];
            let is_vehicle = s.provenance[k] == Provenance::Vehicle;
            assert_eq!(diff > 0.0, is_vehicle, "cell {k}");
            if is_vehicle {
                assert!((1.5..=2.0).contains(&diff));
                assert!(s.road_footprint.bits()[k]);
                raised += 1;
            }
        }
        // 2 m x 4.5 m footprints on 1 m cells, 20 of them.
        assert!(raised >= 20 * 6, "{raised} raised cells");
        assert!(s
            .dsm
            .values()
            .iter()
            .zip(s.dtm.values())
            .all(|(a, b)| a >= b));
    }

    #[test]
    fn standard_scene_layout() {
        let spec = SceneSpec::standard(11);
        let s = generate(&spec).unwrap();
        let g = *s.dsm.geometry();
        assert_eq!((g.width, g.height), (100, 100));
        let frac = s.road_footprint.count_ones() as f64 / g.len() as f64;
        assert!((frac - 0.18).abs() < 0.01, "footprint fraction {frac}");
        let mask_frac = s.mask.count_ones() as f64 / g.len() as f64;
        assert!(
            (mask_frac - 0.18).abs() <= 0.03,
            "mask fraction {mask_frac}"
        );
        for kind in [Provenance::Vehicle, Provenance::Tree, Provenance::Facade] {
            assert!(s.provenance.contains(&kind), "{kind:?} missing");
        }
        for k in 0..g.len() {
            match s.provenance[k] {
                Provenance::Tree | Provenance::Facade => assert!(!s.road_footprint.bits()[k]),
                Provenance::Vehicle => assert!(s.road_footprint.bits()[k]),
                _ => {}
            }
        }
        // Some off-road objects spill into the mask.
        let spilled = (0..g.len())
            .filter(|&k| s.mask.bits()[k] && !s.road_footprint.bits()[k])
            .count();
        assert!(spilled > 0);
        assert!((0..g.len()).all(|k| !s.mask.bits()[k]
            || s.road_footprint.bits()[k]
            || s.provenance[k].is_object()));
    }

    #[test]
    fn ground_truth_lies_on_base_surface() {
        let spec = SceneSpec::standard(2);
        let s = generate(&spec).unwrap();
        assert_eq!(s.gt_road.len() + s.gt_terrain.len(), s.dtm.geometry().len());
        for p in s.gt_road.iter().chain(s.gt_terrain.iter()) {
            assert!((p.z - spec.base_elevation(p.x, p.y)).abs() < 1e-9);
        }
        assert!(s.gt_road.iter().all(|p| s.road_footprint.get(p.i, p.j)));
    }

    #[test]
    fn deterministic() {
        let spec = SceneSpec::standard(99);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = generate(&SceneSpec::standard(100)).unwrap();
        assert_ne!(generate(&spec).unwrap().dsm, other.dsm);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let spec = SceneSpec::standard(4);
        assert_eq!(SceneSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        let text = "tile_size = 20.0\ncell_size = 1.0\n[road]\nwidth = 4.0\npolyline = [[0.0, 10.0], [20.0, 10.0]]\n";
        let small = SceneSpec::from_toml(text).unwrap();
        assert_eq!(small.vehicles.count, 0);
        assert_eq!(
            generate(&small).unwrap().road_footprint.count_ones(),
            20 * 4
        );

        let mut bad = small.clone();
        bad.road.polyline[1] = [25.0, 10.0];
        assert!(generate(&bad).is_err());
        assert!(SceneSpec::from_toml("tile_size = 1.0\nbogus = 2\n").is_err());
    }
}
