//! Mesh quality metrics: point-to-mesh L2 error, mean angular difference
//! (MAD) between adjacent face normals, and the road/terrain split report.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{Mask, PointGrid};
use crate::mesh::TinMesh;

type V3 = [f64; 3];

#[inline]
fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn axpy(a: V3, t: f64, d: V3) -> V3 {
    [a[0] + t * d[0], a[1] + t * d[1], a[2] + t * d[2]]
}

/// Closest point to `p` on the closed triangle `abc` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: V3, a: V3, b: V3, c: V3) -> V3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return axpy(a, d1 / (d1 - d3), ab);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return axpy(a, d2 / (d2 - d6), ac);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return axpy(b, (d4 - d3) / ((d4 - d3) + (d5 - d6)), sub(c, b));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    axpy(axpy(a, v, ab), w, ac)
}

pub fn point_triangle_distance(p: V3, a: V3, b: V3, c: V3) -> f64 {
    let q = closest_point_on_triangle(p, a, b, c);
    dot(sub(p, q), sub(p, q)).sqrt()
}

/// Convex hull (counter-clockwise, collinear points dropped) of the vertices
/// used by at least one triangle.
fn xy_hull(mesh: &TinMesh) -> Vec<[f64; 2]> {
    let mut used = vec![false; mesh.vertices().len()];
    for t in mesh.triangles() {
        for &v in t {
            used[v] = true;
        }
    }
    let mut pts: Vec<[f64; 2]> = mesh
        .vertices()
        .iter()
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|(v, _)| [v[0], v[1]])
        .collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let ordered: Vec<[f64; 2]> = if pass == 0 {
            pts.clone()
        } else {
            pts.iter().rev().copied().collect()
        };
        for q in ordered {
            while hull.len() >= start + 2
                && turn(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0
            {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

fn inside_hull(hull: &[[f64; 2]], x: f64, y: f64, tol: f64) -> bool {
    let n = hull.len();
    (0..n).all(|k| {
        let (a, b) = (hull[k], hull[(k + 1) % n]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        (ex * (y - a[1]) - ey * (x - a[0])) >= -tol * len
    })
}

/// Uniform XY bucket grid over triangle bounding boxes.
struct TriangleIndex {
    min_x: f64,
    min_y: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl TriangleIndex {
    fn new(mesh: &TinMesh) -> Self {
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for t in 0..mesh.triangle_count() {
            for v in mesh.triangle(t) {
                min_x = min_x.min(v[0]);
                min_y = min_y.min(v[1]);
                max_x = max_x.max(v[0]);
                max_y = max_y.max(v[1]);
            }
        }
        let (w, h) = ((max_x - min_x).max(1e-12), (max_y - min_y).max(1e-12));
        let target = (mesh.triangle_count() as f64).sqrt().clamp(1.0, 1024.0);
        let cell = (w.max(h) / target).max(w.min(h) / 1024.0);
        let nx = ((w / cell).ceil() as usize).max(1);
        let ny = ((h / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let clampi = |v: f64, n: usize| (v.floor().max(0.0) as usize).min(n - 1);
        for t in 0..mesh.triangle_count() {
            let tri = mesh.triangle(t);
            let (lx, hx) = tri
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                    (l.min(v[0]), h.max(v[0]))
                });
            let (ly, hy) = tri
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                    (l.min(v[1]), h.max(v[1]))
                });
            for by in clampi((ly - min_y) / cell, ny)..=clampi((hy - min_y) / cell, ny) {
                for bx in clampi((lx - min_x) / cell, nx)..=clampi((hx - min_x) / cell, nx) {
                    buckets[by * nx + bx].push(t as u32);
                }
            }
        }
        Self {
            min_x,
            min_y,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn nearest_distance(&self, mesh: &TinMesh, p: V3, stamp: &mut [u32], query: u32) -> f64 {
        let cx = (((p[0] - self.min_x) / self.cell).floor().max(0.0) as usize).min(self.nx - 1);
        let cy = (((p[1] - self.min_y) / self.cell).floor().max(0.0) as usize).min(self.ny - 1);
        let mut best = f64::INFINITY;
        let max_ring = self.nx.max(self.ny);
        for r in 0..=max_ring {
            let (x0, x1) = (cx as i64 - r as i64, cx as i64 + r as i64);
            let (y0, y1) = (cy as i64 - r as i64, cy as i64 + r as i64);
            for by in y0..=y1 {
                for bx in x0..=x1 {
                    let on_ring = by == y0 || by == y1 || bx == x0 || bx == x1;
                    if !on_ring || bx < 0 || by < 0 || bx >= self.nx as i64 || by >= self.ny as i64
                    {
                        continue;
                    }
                    for &t in &self.buckets[by as usize * self.nx + bx as usize] {
                        if stamp[t as usize] == query {
                            continue;
                        }
                        stamp[t as usize] = query;
                        let [a, b, c] = mesh.triangle(t as usize);
                        best = best.min(point_triangle_distance(p, a, b, c));
                    }
                }
            }
            // Unvisited triangles lie in rings > r, at least r cells away in XY.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Stats {
    /// Mean Euclidean point-to-mesh distance over evaluated points.
    pub mean: f64,
    pub evaluated: usize,
    /// Points whose XY falls outside the mesh's convex hull.
    pub outside: usize,
}

/// Mean unsigned point-to-mesh distance. Points outside the mesh's XY hull
/// are skipped and counted.
pub fn l2_error(mesh: &TinMesh, gt_points: &PointGrid) -> Result<L2Stats> {
    if mesh.is_empty() {
        return Err(Error::Degenerate("L2 error needs a non-empty mesh".into()));
    }
    if gt_points.is_empty() {
        return Err(Error::Degenerate(
            "L2 error needs at least one ground-truth point".into(),
        ));
    }
    let hull = xy_hull(mesh);
    let scale = hull
        .iter()
        .fold(1.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
    let tol = 1e-9 * scale;
    let index = TriangleIndex::new(mesh);
    let mut stamp = vec![u32::MAX; mesh.triangle_count()];
    let (mut sum, mut evaluated, mut outside) = (0.0, 0usize, 0usize);
    for (q, p) in gt_points.iter().enumerate() {
        if !inside_hull(&hull, p.x, p.y, tol) {
            outside += 1;
            continue;
        }
        sum += index.nearest_distance(mesh, [p.x, p.y, p.z], &mut stamp, q as u32);
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Degenerate(
            "no ground-truth point lies inside the mesh footprint".into(),
        ));
    }
    Ok(L2Stats {
        mean: sum / evaluated as f64,
        evaluated,
        outside,
    })
}

/// Angle in degrees between two face normals, folded into [0, 90].
/// Angles below floating-point resolution are reported as exactly 0.
pub fn normal_angle_deg(n1: V3, n2: V3) -> f64 {
    let c = dot(n1, n2).abs();
    let x = cross(n1, n2);
    let s = dot(x, x).sqrt();
    if s <= 1e-12 * c {
        return 0.0;
    }
    s.atan2(c).to_degrees()
}

/// Faces sharing each undirected edge.
fn edge_adjacency(mesh: &TinMesh) -> Vec<Vec<usize>> {
    let mut edges: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, t) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            edges.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut adj = vec![Vec::new(); mesh.triangle_count()];
    for faces in edges.values() {
        for &f in faces {
            for &g in faces {
                if f != g {
                    adj[f].push(g);
                }
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    adj
}

/// Per-face mean angle to its edge-adjacent faces; `None` for isolated faces.
pub fn mad_per_face(mesh: &TinMesh) -> Vec<Option<f64>> {
    let normals: Vec<V3> = (0..mesh.triangle_count())
        .map(|t| mesh.face_normal(t))
        .collect();
    edge_adjacency(mesh)
        .iter()
        .enumerate()
        .map(|(f, nbrs)| {
            if nbrs.is_empty() {
                return None;
            }
            let sum: f64 = nbrs
                .iter()
                .map(|&g| normal_angle_deg(normals[f], normals[g]))
                .sum();
            Some(sum / nbrs.len() as f64)
        })
        .collect()
}

/// Mean angular difference in degrees, averaged over faces that have at
/// least one edge-adjacent neighbor.
pub fn mad(mesh: &TinMesh) -> Result<f64> {
    let per_face = mad_per_face(mesh);
    let (sum, n) = per_face
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Degenerate("mesh has no adjacent face pairs".into()));
    }
    Ok(sum / n as f64)
}

/// Splits triangles by the mask cell nearest to each XY centroid. Both parts
/// keep the full vertex list.
pub fn split_mesh_by_mask(mesh: &TinMesh, mask_plus: &Mask) -> (TinMesh, TinMesh) {
    let (mut road, mut terrain) = (Vec::new(), Vec::new());
    for (k, &t) in mesh.triangles().iter().enumerate() {
        let [a, b, c] = mesh.triangle(k);
        let cx = (a[0] + b[0] + c[0]) / 3.0;
        let cy = (a[1] + b[1] + c[1]) / 3.0;
        if mask_plus.sample_nearest(cx, cy) {
            road.push(t);
        } else {
            terrain.push(t);
        }
    }
    (mesh.with_triangles(road), mesh.with_triangles(terrain))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub l2_road: f64,
    pub l2_terrain: f64,
    pub mad_road: f64,
    pub mad_terrain: f64,
    pub triangle_count: usize,
    pub road_points_outside: usize,
    pub terrain_points_outside: usize,
}

pub const METRIC_CSV_HEADER: &str =
    "method,l2_road_m,l2_terrain_m,mad_road_deg,mad_terrain_deg,triangles,road_points_outside,terrain_points_outside";

impl MetricReport {
    pub fn csv_row(&self, method: &str) -> String {
        format!(
            "{method},{},{},{},{},{},{},{}",
            self.l2_road,
            self.l2_terrain,
            self.mad_road,
            self.mad_terrain,
            self.triangle_count,
            self.road_points_outside,
            self.terrain_points_outside
        )
    }
}

/// Header plus one row per `(method, report)`.
pub fn metrics_csv(rows: &[(&str, MetricReport)]) -> String {
    let mut s = String::from(METRIC_CSV_HEADER);
    s.push('\n');
    for (name, r) in rows {
        s.push_str(&r.csv_row(name));
        s.push('\n');
    }
    s
}

/// Aligned text table with road/terrain column groups.
pub fn metrics_table(rows: &[(&str, MetricReport)]) -> String {
    let w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<w$}  {:>10} {:>10}  {:>10} {:>10}  {:>10}",
        "", "Road", "", "Terrain", "", ""
    );
    let _ = writeln!(
        s,
        "{:<w$}  {:>10} {:>10}  {:>10} {:>10}  {:>10}",
        "Method", "L2 (m)", "MAD (deg)", "L2 (m)", "MAD (deg)", "T"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<w$}  {:>10.3} {:>10.2}  {:>10.3} {:>10.2}  {:>10}",
            name, r.l2_road, r.mad_road, r.l2_terrain, r.mad_terrain, r.triangle_count
        );
    }
    s
}

/// MAD of a submesh, 0 when it has no adjacent face pairs.
fn submesh_mad(mesh: &TinMesh) -> f64 {
    mad(mesh).unwrap_or(0.0)
}

/// L2 against both ground-truth sets on the full mesh, MAD on the road and
/// terrain parts selected by the mask.
pub fn evaluate_all(
    mesh: &TinMesh,
    gt_road: &PointGrid,
    gt_terrain: &PointGrid,
    mask_plus: &Mask,
) -> Result<MetricReport> {
    let road = l2_error(mesh, gt_road)?;
    let terrain = l2_error(mesh, gt_terrain)?;
    let (road_mesh, terrain_mesh) = split_mesh_by_mask(mesh, mask_plus);
    Ok(MetricReport {
        l2_road: road.mean,
        l2_terrain: terrain.mean,
        mad_road: submesh_mad(&road_mesh),
        mad_terrain: submesh_mad(&terrain_mesh),
        triangle_count: mesh.triangle_count(),
        road_points_outside: road.outside,
        terrain_points_outside: terrain.outside,
    })
}
