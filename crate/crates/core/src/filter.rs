//! Noise removal for road point sets.
//!
//! Points are first grouped by elevation-constrained region growing over the
//! 8-neighborhood of each cell, clusters that come within a planar distance
//! of each other at compatible elevations are merged, and finally only the
//! largest clusters are kept. What survives is the cleaned road mask.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, Mask, PointGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// Maximum planar distance (m) between witness points of two merged clusters.
    pub theta_xy: f64,
    /// Maximum elevation difference (m) between neighboring points.
    pub theta_z: f64,
    /// Number of largest clusters kept.
    pub top_k: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            theta_xy: 10.0,
            theta_z: 0.5,
            top_k: 1,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_xy > 0.0) || !self.theta_xy.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "theta_xy must be > 0, got {}",
                self.theta_xy
            )));
        }
        if !(self.theta_z > 0.0) || self.theta_z.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "theta_z must be > 0, got {}",
                self.theta_z
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidParameter("top_k must be >= 1".into()));
        }
        Ok(())
    }

    /// Logs a warning when `theta_xy` cannot even bridge a diagonal cell step.
    pub fn check_against(&self, geometry: &GridGeometry) {
        let diag = geometry.cell_size_x.hypot(geometry.cell_size_y);
        if self.theta_xy <= diag {
            warn!(
                "theta_xy = {} m does not exceed the cell diagonal {:.3} m; merging cannot bridge gaps",
                self.theta_xy, diag
            );
        }
    }
}

/// Symmetric adjacency between points of a [`PointGrid`], by point position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    lists: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Neighbors of point `k`, ascending.
    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.lists[k]
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.lists[a].binary_search(&b).is_ok()
    }
}

/// Per-cell cluster labels; 0 marks cells without a (kept) point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    geometry: GridGeometry,
    labels: Vec<u32>,
    count: u32,
}

impl LabelGrid {
    fn zeros(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            labels: vec![0; geometry.len()],
            count: 0,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.labels[self.geometry.index(i, j)]
    }

    /// Highest label in use; labels are `1..=count`.
    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Label of every point, in point order.
    pub fn point_labels(&self, points: &PointGrid) -> Vec<u32> {
        points.iter().map(|p| self.get(p.i, p.j)).collect()
    }

    /// Number of points carrying each label (index 0 unused).
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count as usize + 1];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }

    pub fn to_mask(&self) -> Mask {
        Mask::from_fn(self.geometry, |i, j| self.get(i, j) > 0)
    }
}

/// 8-neighborhood adjacency with `|Δz| <= theta_z`.
pub fn get_neighbors(points: &PointGrid, theta_z: f64) -> Adjacency {
    let g = points.geometry();
    let mut lists = vec![Vec::new(); points.len()];
    for (k, p) in points.iter().enumerate() {
        let list = &mut lists[k];
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (p.i as i64 + di, p.j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= g.width as i64 || nj >= g.height as i64 {
                    continue;
                }
                if let Some(q) = points.index_of(ni as usize, nj as usize) {
                    if (points.points()[q].z - p.z).abs() <= theta_z {
                        list.push(q);
                    }
                }
            }
        }
        list.sort_unstable();
    }
    Adjacency { lists }
}

/// Labels connected components of the adjacency graph, seeds taken in scan order.
pub fn grow_regions(points: &PointGrid, neighbors: &Adjacency) -> LabelGrid {
    let g = *points.geometry();
    let mut out = LabelGrid::zeros(g);
    let mut point_label = vec![0u32; points.len()];
    let mut stack = Vec::new();
    let mut next = 1u32;
    for seed in 0..points.len() {
        if point_label[seed] != 0 {
            continue;
        }
        point_label[seed] = next;
        stack.push(seed);
        while let Some(k) = stack.pop() {
            for &q in neighbors.neighbors(k) {
                if point_label[q] == 0 {
                    point_label[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    for (p, &l) in points.iter().zip(&point_label) {
        out.labels[g.index(p.i, p.j)] = l;
    }
    out.count = next - 1;
    out
}

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
    }
}

/// Merges clusters that have a witness pair within `theta_xy` in the plane
/// and `theta_z` in elevation, closing transitively. Labels are renumbered
/// by first appearance in scan order.
pub fn merge_clusters(
    points: &PointGrid,
    labels: &LabelGrid,
    theta_xy: f64,
    theta_z: f64,
) -> LabelGrid {
    let pts = points.points();
    let point_labels = labels.point_labels(points);
    let mut sets = DisjointSet::new(labels.count() as usize + 1);

    let key = |x: f64, y: f64| ((x / theta_xy).floor() as i64, (y / theta_xy).floor() as i64);
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (k, p) in pts.iter().enumerate() {
        if point_labels[k] > 0 {
            buckets.entry(key(p.x, p.y)).or_default().push(k);
        }
    }

    let r2 = theta_xy * theta_xy;
    for (k, p) in pts.iter().enumerate() {
        let lp = point_labels[k];
        if lp == 0 {
            continue;
        }
        let (bx, by) = key(p.x, p.y);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(bucket) = buckets.get(&(bx + dx, by + dy)) else {
                    continue;
                };
                for &q in bucket {
                    let lq = point_labels[q];
                    if q <= k || lq == lp {
                        continue;
                    }
                    let o = &pts[q];
                    if (o.z - p.z).abs() > theta_z {
                        continue;
                    }
                    let (ex, ey) = (o.x - p.x, o.y - p.y);
                    if ex * ex + ey * ey <= r2 && sets.find(lp) != sets.find(lq) {
                        sets.union(lp, lq);
                    }
                }
            }
        }
    }

    let g = *points.geometry();
    let mut out = LabelGrid::zeros(g);
    let mut renumber: Vec<u32> = vec![0; labels.count() as usize + 1];
    let mut next = 0u32;
    for (p, &l) in pts.iter().zip(&point_labels) {
        if l == 0 {
            continue;
        }
        let root = sets.find(l) as usize;
        if renumber[root] == 0 {
            next += 1;
            renumber[root] = next;
        }
        out.labels[g.index(p.i, p.j)] = renumber[root];
    }
    out.count = next;
    out
}

/// Keeps the `top_k` largest clusters (ties: smaller label first), relabelled
/// `1..=k` by rank, and returns the cleaned mask alongside.
pub fn clean_clusters(points: &PointGrid, labels: &LabelGrid, top_k: usize) -> (LabelGrid, Mask) {
    let sizes = labels.cluster_sizes();
    let mut ranked: Vec<u32> = (1..=labels.count())
        .filter(|&l| sizes[l as usize] > 0)
        .collect();
    ranked.sort_by(|&a, &b| sizes[b as usize].cmp(&sizes[a as usize]).then(a.cmp(&b)));
    ranked.truncate(top_k);

    let mut remap = vec![0u32; labels.count() as usize + 1];
    for (rank, &l) in ranked.iter().enumerate() {
        remap[l as usize] = rank as u32 + 1;
    }
    let g = *points.geometry();
    let mut out = LabelGrid::zeros(g);
    for p in points.iter() {
        let idx = g.index(p.i, p.j);
        out.labels[idx] = remap[labels.labels[idx] as usize];
    }
    out.count = ranked.len() as u32;
    let mask = out.to_mask();
    (out, mask)
}

/// Output of [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// Surviving road points.
    pub points: PointGrid,
    /// Cleaned road mask, set exactly where a point survived.
    pub mask: Mask,
    /// Final labels (`1..=top_k`).
    pub labels: LabelGrid,
}

pub fn run_filter(points: &PointGrid, params: &FilterParams) -> Result<FilterOutput> {
    params.validate()?;
    params.check_against(points.geometry());
    let neighbors = get_neighbors(points, params.theta_z);
    let grown = grow_regions(points, &neighbors);
    let merged = merge_clusters(points, &grown, params.theta_xy, params.theta_z);
    let (labels, mask) = clean_clusters(points, &merged, params.top_k);
    let kept = points.retain_indices(|k| {
        let p = points.points()[k];
        labels.get(p.i, p.j) > 0
    });
    Ok(FilterOutput {
        points: kept,
        mask,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(w: usize, h: usize) -> GridGeometry {
        GridGeometry::from_corner(w, h, 1.0, 0.0, 0.0).unwrap()
    }

    fn full(w: usize, h: usize, z: impl Fn(usize, usize) -> f64) -> PointGrid {
        let cells: Vec<_> = (0..h)
            .flat_map(|j| (0..w).map(move |i| (i, j)))
            .map(|(i, j)| (i, j, z(i, j)))
            .collect();
        PointGrid::from_cells(geom(w, h), cells).unwrap()
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = geom(2, 2);
        let same = PointGrid::from_cells(g, [(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let adj = get_neighbors(&same, 0.5);
        assert!(adj.contains(0, 1) && adj.contains(1, 0));

        let at = PointGrid::from_cells(g, [(0, 0, 0.0), (1, 0, 0.5)]).unwrap();
        assert!(get_neighbors(&at, 0.5).contains(0, 1));
        let above = PointGrid::from_cells(g, [(0, 0, 0.0), (1, 0, 0.5 + 1e-9)]).unwrap();
        assert!(!get_neighbors(&above, 0.5).contains(0, 1));
    }

    #[test]
    fn flat_grid_is_one_region() {
        let pts = full(3, 3, |_, _| 0.0);
        let labels = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        assert_eq!(labels.count(), 1);
        assert!(labels.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn raised_block_separates() {
        let pts = full(4, 4, |i, j| if i >= 2 && j >= 2 { 5.0 } else { 0.0 });
        let labels = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        assert_eq!(labels.count(), 2);
        assert_eq!(labels.get(0, 0), 1);
        assert_eq!(labels.get(3, 3), 2);
        assert_eq!(labels.cluster_sizes(), vec![0, 12, 4]);
    }

    #[test]
    fn empty_input() {
        let pts = PointGrid::empty(geom(3, 3));
        let labels = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        assert_eq!(labels.count(), 0);
    }

    #[test]
    fn merge_bridges_nodata_gap() {
        // Two 3-wide bands separated by a one-column hole.
        let cells: Vec<_> = (0..3)
            .flat_map(|j| (0..7).filter(|&i| i != 3).map(move |i| (i, j, 1.0)))
            .collect();
        let pts = PointGrid::from_cells(geom(7, 3), cells).unwrap();
        let grown = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        assert_eq!(grown.count(), 2);
        let merged = merge_clusters(&pts, &grown, 10.0, 0.5);
        assert_eq!(merged.count(), 1);

        // Planar gap too wide for theta_xy.
        let unchanged = merge_clusters(&pts, &grown, 1.5, 0.5);
        assert_eq!(unchanged, grown);
        // Elevation criterion still applies to the witness pair.
        let shifted: Vec<_> = pts
            .iter()
            .map(|p| (p.i, p.j, if p.i > 3 { 2.0 } else { 1.0 }))
            .collect();
        let pts2 = PointGrid::from_cells(geom(7, 3), shifted).unwrap();
        let grown2 = grow_regions(&pts2, &get_neighbors(&pts2, 0.5));
        assert_eq!(merge_clusters(&pts2, &grown2, 10.0, 0.5).count(), 2);
    }

    #[test]
    fn single_cluster_merge_is_identity() {
        let pts = full(5, 5, |i, _| i as f64 * 0.1);
        let grown = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        assert_eq!(merge_clusters(&pts, &grown, 10.0, 0.5), grown);
    }

    fn three_clusters() -> PointGrid {
        // 100-cell block, 10-cell and 5-cell strips, separated by wide gaps.
        let mut cells = Vec::new();
        for j in 0..10 {
            for i in 0..10 {
                cells.push((i, j, 0.0));
            }
        }
        for i in 0..10 {
            cells.push((i, 25, 3.0));
        }
        for i in 0..5 {
            cells.push((i, 39, 6.0));
        }
        PointGrid::from_cells(geom(40, 40), cells).unwrap()
    }

    #[test]
    fn clean_keeps_largest() {
        let pts = three_clusters();
        let grown = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        assert_eq!(grown.cluster_sizes(), vec![0, 100, 10, 5]);
        let (labels, mask) = clean_clusters(&pts, &grown, 1);
        assert_eq!(mask.count_ones(), 100);
        assert_eq!(labels.count(), 1);
        assert!(mask.get(0, 0) && !mask.get(0, 25));

        let (same, _) = clean_clusters(&pts, &grown, 3);
        assert_eq!(same, grown);
        let (same, _) = clean_clusters(&pts, &grown, 10);
        assert_eq!(same, grown);
    }

    #[test]
    fn clean_ties_prefer_smaller_label() {
        let cells = vec![(0, 0, 0.0), (0, 5, 0.0), (0, 9, 0.0)];
        let pts = PointGrid::from_cells(geom(3, 10), cells).unwrap();
        let grown = grow_regions(&pts, &get_neighbors(&pts, 0.5));
        let (labels, _) = clean_clusters(&pts, &grown, 2);
        assert_eq!(labels.get(0, 0), 1);
        assert_eq!(labels.get(0, 5), 2);
        assert_eq!(labels.get(0, 9), 0);
    }

    #[test]
    fn run_filter_is_identity_on_clean_road() {
        let pts = full(12, 6, |i, j| 0.05 * i as f64 + 0.02 * j as f64);
        let out = run_filter(&pts, &FilterParams::default()).unwrap();
        assert_eq!(out.points, pts);
        assert_eq!(out.mask, pts.occupancy());
    }

    #[test]
    fn rejects_bad_params() {
        let pts = full(3, 3, |_, _| 0.0);
        for p in [
            FilterParams {
                theta_xy: 0.0,
                ..Default::default()
            },
            FilterParams {
                theta_z: -1.0,
                ..Default::default()
            },
            FilterParams {
                top_k: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                run_filter(&pts, &p),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    fn random_points() -> impl Strategy<Value = PointGrid> {
        (2usize..12, 2usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(proptest::option::weighted(0.8, 0u8..8), w * h).prop_map(
                move |cells| {
                    let cells: Vec<_> = cells
                        .into_iter()
                        .enumerate()
                        .filter_map(|(k, z)| z.map(|z| (k % w, k / w, z as f64 * 0.3)))
                        .collect();
                    PointGrid::from_cells(geom(w, h), cells).unwrap()
                },
            )
        })
    }

    /// Partition as a canonical "first point of my class" vector.
    fn partition(points: &PointGrid, labels: &LabelGrid) -> Vec<usize> {
        let pl = labels.point_labels(points);
        (0..pl.len())
            .map(|k| pl.iter().position(|&l| l == pl[k]).unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn coarsens_with_theta_z(pts in random_points(), a in 0.1f64..1.0, b in 0.0f64..2.0) {
            let lo = grow_regions(&pts, &get_neighbors(&pts, a));
            let hi = grow_regions(&pts, &get_neighbors(&pts, a + b));
            let (pl_lo, pl_hi) = (lo.point_labels(&pts), hi.point_labels(&pts));
            for x in 0..pts.len() {
                for y in 0..pts.len() {
                    if pl_lo[x] == pl_lo[y] {
                        prop_assert_eq!(pl_hi[x], pl_hi[y]);
                    }
                }
            }
            let mlo = merge_clusters(&pts, &lo, 3.0, a);
            let mhi = merge_clusters(&pts, &hi, 3.0, a + b);
            let (ml, mh) = (mlo.point_labels(&pts), mhi.point_labels(&pts));
            for x in 0..pts.len() {
                for y in 0..pts.len() {
                    if ml[x] == ml[y] {
                        prop_assert_eq!(mh[x], mh[y]);
                    }
                }
            }
        }

        #[test]
        fn clean_never_grows_clusters(pts in random_points(), k in 1usize..4) {
            let grown = grow_regions(&pts, &get_neighbors(&pts, 0.5));
            let (cleaned, mask) = clean_clusters(&pts, &grown, k);
            let before = grown.point_labels(&pts);
            let after = cleaned.point_labels(&pts);
            for x in 0..pts.len() {
                if after[x] > 0 {
                    // Whole source cluster retained.
                    for y in 0..pts.len() {
                        if before[y] == before[x] {
                            prop_assert_eq!(after[y], after[x]);
                        }
                    }
                }
            }
            prop_assert_eq!(mask.count_ones(), after.iter().filter(|&&l| l > 0).count());
            prop_assert!(partition(&pts, &cleaned).len() == pts.len());
        }

        #[test]
        fn filter_is_deterministic(pts in random_points()) {
            let p = FilterParams { theta_xy: 2.5, theta_z: 0.4, top_k: 2 };
            prop_assert_eq!(run_filter(&pts, &p).unwrap(), run_filter(&pts, &p).unwrap());
        }
    }
}
