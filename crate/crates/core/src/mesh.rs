//! Triangle meshes: the dual-rate TIN built from a fitted surface, the plane
//! and regular-grid baselines, and Wavefront OBJ import/export.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::delaunay::triangulate;
use crate::error::{Error, Result};
use crate::grid::{Extent, Mask, PointGrid, Raster};
use crate::nurbs::NurbsSurface;

/// Vertices in world coordinates plus counter-clockwise (in XY) triangles.
/// The optional attribute carries one scalar per vertex and is exported as
/// a vertex color.
#[derive(Debug, Clone, PartialEq)]
pub struct TinMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    attributes: Option<Vec<f64>>,
}

fn xy_area2(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

impl TinMesh {
    /// Checks indices and rejects triangles with zero XY area. Clockwise
    /// triangles are flipped.
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "mesh vertices must be finite".into(),
            ));
        }
        let mut tris = triangles;
        for (k, t) in tris.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::InvalidParameter(format!(
                    "triangle {k} references a missing vertex"
                )));
            }
            let a2 = xy_area2(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if a2 == 0.0 {
                return Err(Error::Degenerate(format!(
                    "triangle {k} has zero area in XY"
                )));
            }
            if a2 < 0.0 {
                t.swap(1, 2);
            }
        }
        Ok(Self {
            vertices,
            triangles: tris,
            attributes: None,
        })
    }

    pub fn with_attributes(mut self, attributes: Vec<f64>) -> Result<Self> {
        if attributes.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} attributes for {} vertices",
                attributes.len(),
                self.vertices.len()
            )));
        }
        self.attributes = Some(attributes);
        Ok(self)
    }

    /// Same vertices, a subset of the triangles.
    pub(crate) fn with_triangles(&self, triangles: Vec<[usize; 3]>) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles,
            attributes: self.attributes.clone(),
        }
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn attributes(&self) -> Option<&[f64]> {
        self.attributes.as_deref()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [[f64; 3]; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.triangle(t);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    }

    pub fn to_obj_string(&self) -> Result<String> {
        if self.triangles.is_empty() {
            return Err(Error::Degenerate(
                "cannot export a mesh without triangles".into(),
            ));
        }
        let colors = self.attributes.as_deref().map(attribute_colors);
        let mut s = String::with_capacity(self.vertices.len() * 40 + self.triangles.len() * 20);
        for (k, v) in self.vertices.iter().enumerate() {
            match &colors {
                Some(c) => {
                    let [r, g, b] = c[k];
                    let _ = writeln!(s, "v {} {} {} {r:.4} {g:.4} {b:.4}", v[0], v[1], v[2]);
                }
                None => {
                    let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
                }
            }
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        Ok(s)
    }

    /// Reads `v` and `f` records. Vertex colors are skipped, polygons with
    /// more than three corners are fanned into triangles.
    pub fn parse_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut c = [0.0; 3];
                    for slot in &mut c {
                        let tok = it
                            .next()
                            .ok_or_else(|| Error::parse(line_no, "vertex needs x y z"))?;
                        *slot = tok.parse().map_err(|_| {
                            Error::parse(line_no, format!("bad coordinate {tok:?}"))
                        })?;
                    }
                    vertices.push(c);
                }
                Some("f") => {
                    let idx = it
                        .map(|tok| {
                            let head = tok.split('/').next().unwrap_or("");
                            match head.parse::<usize>() {
                                Ok(k) if k >= 1 => Ok(k - 1),
                                _ => Err(Error::parse(line_no, format!("bad face index {tok:?}"))),
                            }
                        })
                        .collect::<Result<Vec<usize>>>()?;
                    if idx.len() < 3 {
                        return Err(Error::parse(line_no, "face needs at least 3 vertices"));
                    }
                    for k in 1..idx.len() - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }
}

/// Blue-to-red ramp over the attribute range.
fn attribute_colors(values: &[f64]) -> Vec<[f64; 3]> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            let t = if span > 0.0 && v.is_finite() {
                (v - lo) / span
            } else {
                0.0
            };
            [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t]
        })
        .collect()
}

pub fn export_mesh(mesh: &TinMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = mesh.to_obj_string()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TinMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TinMesh::parse_obj(&text)
}

/// Sampling steps (meters) on and off the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub road_rate: f64,
    pub terrain_rate: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            road_rate: 1.0,
            terrain_rate: 10.0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.road_rate > 0.0)
            || !(self.terrain_rate >= self.road_rate)
            || !self.terrain_rate.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "sampling rates must satisfy 0 < road ({}) <= terrain ({})",
                self.road_rate, self.terrain_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub road: bool,
}

/// Coordinates `min, min + step, ...` up to `max`, with `max` itself
/// appended when the step does not land on it.
pub fn lattice_coords(min: f64, max: f64, step: f64) -> Vec<f64> {
    let span = max - min;
    let n = (span / step + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=n).map(|k| min + k as f64 * step).collect();
    let last = *out.last().unwrap_or(&min);
    if max - last > 1e-9 * step.max(span.abs()) {
        out.push(max);
    } else if let Some(l) = out.last_mut() {
        *l = max;
    }
    out
}

/// Road-rate lattice points on the road mask plus terrain-rate lattice points
/// off it, both anchored at the surface extent's lower-left corner and
/// lifted onto the surface. Samples that coincide keep the road copy.
pub fn dynamic_sample(
    surface: &NurbsSurface,
    mask_plus: &Mask,
    config: &SamplingConfig,
) -> Result<Vec<SurfaceSample>> {
    config.validate()?;
    let ext: Extent = surface.extent();
    let key = |x: f64, y: f64| ((x * 1e6).round() as i64, (y * 1e6).round() as i64);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (rate, road) in [(config.road_rate, true), (config.terrain_rate, false)] {
        let xs = lattice_coords(ext.min_x, ext.max_x, rate);
        let ys = lattice_coords(ext.min_y, ext.max_y, rate);
        for &y in &ys {
            for &x in &xs {
                if mask_plus.sample_nearest(x, y) != road || !seen.insert(key(x, y)) {
                    continue;
                }
                out.push(SurfaceSample {
                    x,
                    y,
                    z: surface.elevation_at(x, y)?,
                    road,
                });
            }
        }
    }
    Ok(out)
}

/// Delaunay TIN over the dynamic samples. The vertex attribute is 1 for
/// road samples and 0 for terrain samples.
pub fn build_tin(
    surface: &NurbsSurface,
    mask_plus: &Mask,
    config: &SamplingConfig,
) -> Result<TinMesh> {
    let samples = dynamic_sample(surface, mask_plus, config)?;
    tin_from_samples(&samples)
}

pub fn tin_from_samples(samples: &[SurfaceSample]) -> Result<TinMesh> {
    let xy: Vec<[f64; 2]> = samples.iter().map(|s| [s.x, s.y]).collect();
    let tris = triangulate(&xy)?;
    let vertices = samples.iter().map(|s| [s.x, s.y, s.z]).collect();
    TinMesh::new(vertices, tris)?.with_attributes(
        samples
            .iter()
            .map(|s| if s.road { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// `z = a·x + b·y + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlaneModel {
    pub fn elevation(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Least-squares plane through the points, solved on centered coordinates.
pub fn fit_plane(points: &PointGrid) -> Result<PlaneModel> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "plane fit needs 3 points, got {n}"
        )));
    }
    let nf = n as f64;
    let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
    for p in points.iter() {
        mx += p.x;
        my += p.y;
        mz += p.z;
    }
    mx /= nf;
    my /= nf;
    mz /= nf;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points.iter() {
        let (dx, dy, dz) = (p.x - mx, p.y - my, p.z - mz);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det > 1e-12 * sxx * syy) {
        return Err(Error::Degenerate(
            "points are collinear; plane is not determined".into(),
        ));
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    Ok(PlaneModel {
        a,
        b,
        c: mz - a * mx - b * my,
    })
}

/// Two triangles spanning the extent, lifted onto the plane.
pub fn plane_mesh(plane: &PlaneModel, extent: &Extent) -> Result<TinMesh> {
    let corners = [
        (extent.min_x, extent.min_y),
        (extent.max_x, extent.min_y),
        (extent.max_x, extent.max_y),
        (extent.min_x, extent.max_y),
    ];
    let vertices = corners
        .iter()
        .map(|&(x, y)| [x, y, plane.elevation(x, y)])
        .collect();
    TinMesh::new(vertices, vec![[0, 1, 2], [0, 2, 3]])
}

/// Regular grid triangulation: one vertex per valid cell center, each quad
/// of four valid cells split along its lower-left to upper-right diagonal.
pub fn rgt_mesh(raster: &Raster) -> Result<TinMesh> {
    let g = raster.geometry();
    let mut index = vec![usize::MAX; g.len()];
    let mut vertices = Vec::with_capacity(raster.valid_count());
    for j in 0..g.height {
        for i in 0..g.width {
            if let Some(z) = raster.get(i, j) {
                let (x, y) = g.cell_to_world(i, j);
                index[g.index(i, j)] = vertices.len();
                vertices.push([x, y, z]);
            }
        }
    }
    let mut triangles = Vec::with_capacity(2 * (g.width - 1) * (g.height - 1));
    for j in 0..g.height - 1 {
        for i in 0..g.width - 1 {
            let v00 = index[g.index(i, j)];
            let v10 = index[g.index(i + 1, j)];
            let v01 = index[g.index(i, j + 1)];
            let v11 = index[g.index(i + 1, j + 1)];
            if [v00, v10, v01, v11].contains(&usize::MAX) {
                continue;
            }
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    if triangles.is_empty() {
        return Err(Error::Degenerate(
            "raster has no 2x2 block of valid cells".into(),
        ));
    }
    TinMesh::new(vertices, triangles)
}
