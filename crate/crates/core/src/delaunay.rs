//! Incremental Bowyer–Watson Delaunay triangulation in the plane.
//!
//! The convex hull is closed with "ghost" triangles that share a symbolic
//! vertex at infinity, so no bounding super-triangle is needed and every
//! input point ends up in the output. Orientation and in-circle tests use
//! exact adaptive predicates; a point exactly on a circumcircle does not
//! count as a conflict, so cocircular configurations keep the diagonal that
//! was created first.

use std::collections::{HashMap, HashSet, VecDeque};

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

const GHOST: usize = usize::MAX;
const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Tri {
    /// Counter-clockwise for real triangles; ghosts store the infinite
    /// vertex last, with the outside of the hull to the left of `v[0] → v[1]`.
    v: [usize; 3],
    /// `n[k]` is the triangle across the edge opposite `v[k]`.
    n: [usize; 3],
    alive: bool,
}

impl Tri {
    fn is_ghost(&self) -> bool {
        self.v[2] == GHOST
    }
}

struct Builder<'a> {
    pts: &'a [[f64; 2]],
    tris: Vec<Tri>,
    free: Vec<usize>,
    last: usize,
}

#[inline]
fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

impl<'a> Builder<'a> {
    fn orient(&self, a: usize, b: usize, c: usize) -> f64 {
        orient2d(coord(self.pts[a]), coord(self.pts[b]), coord(self.pts[c]))
    }

    fn conflicts(&self, t: usize, p: usize) -> bool {
        let tri = &self.tris[t];
        let [a, b, c] = tri.v;
        if !tri.is_ghost() {
            return incircle(
                coord(self.pts[a]),
                coord(self.pts[b]),
                coord(self.pts[c]),
                coord(self.pts[p]),
            ) > 0.0;
        }
        let o = self.orient(a, b, p);
        if o != 0.0 {
            return o > 0.0;
        }
        // Collinear with the hull edge: conflict only strictly inside it.
        let (pa, pb, pp) = (self.pts[a], self.pts[b], self.pts[p]);
        let dot = (pp[0] - pa[0]) * (pb[0] - pa[0]) + (pp[1] - pa[1]) * (pb[1] - pa[1]);
        let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
        dot > 0.0 && dot < len2
    }

    fn alloc(&mut self, tri: Tri) -> usize {
        if let Some(k) = self.free.pop() {
            self.tris[k] = tri;
            k
        } else {
            self.tris.push(tri);
            self.tris.len() - 1
        }
    }

    /// Finds a triangle whose circumcircle (or ghost half-plane) holds `p`.
    fn locate(&self, p: usize) -> usize {
        let mut t = self.last;
        let limit = 4 * self.tris.len() + 16;
        for _ in 0..limit {
            let tri = &self.tris[t];
            if tri.is_ghost() {
                if self.conflicts(t, p) {
                    return t;
                }
                break;
            }
            let mut next = None;
            for k in 0..3 {
                let (a, b) = (tri.v[(k + 1) % 3], tri.v[(k + 2) % 3]);
                if self.orient(a, b, p) < 0.0 {
                    next = Some(tri.n[k]);
                    break;
                }
            }
            match next {
                Some(n) => t = n,
                None => return t,
            }
        }
        (0..self.tris.len())
            .find(|&k| self.tris[k].alive && self.conflicts(k, p))
            .expect("every new point conflicts with some triangle")
    }

    fn insert(&mut self, p: usize) {
        let seed = self.locate(p);
        let mut cavity = vec![seed];
        let mut in_cavity: HashSet<usize> = HashSet::from([seed]);
        let mut rejected: HashSet<usize> = HashSet::new();
        // (u, v, outside triangle) for each cavity boundary edge, oriented as
        // in the cavity triangle.
        let mut boundary: Vec<(usize, usize, usize)> = Vec::new();
        let mut queue = VecDeque::from([seed]);
        while let Some(t) = queue.pop_front() {
            let tri = self.tris[t];
            for k in 0..3 {
                let nb = tri.n[k];
                if in_cavity.contains(&nb) {
                    continue;
                }
                if !rejected.contains(&nb) && self.conflicts(nb, p) {
                    in_cavity.insert(nb);
                    cavity.push(nb);
                    queue.push_back(nb);
                } else {
                    rejected.insert(nb);
                    boundary.push((tri.v[(k + 1) % 3], tri.v[(k + 2) % 3], nb));
                }
            }
        }

        for &t in &cavity {
            self.tris[t].alive = false;
            self.free.push(t);
        }

        let mut by_start: HashMap<usize, usize> = HashMap::with_capacity(boundary.len());
        let mut by_end: HashMap<usize, usize> = HashMap::with_capacity(boundary.len());
        let mut created = Vec::with_capacity(boundary.len());
        for &(u, v, nb) in &boundary {
            let t = self.alloc(Tri {
                v: [u, v, p],
                n: [NONE, NONE, nb],
                alive: true,
            });
            by_start.insert(u, t);
            by_end.insert(v, t);
            created.push(t);
            // Point the outside triangle back at the new one.
            let outside = &mut self.tris[nb];
            let k = (0..3)
                .find(|&k| outside.v[k] != u && outside.v[k] != v)
                .expect("shared edge");
            outside.n[k] = t;
        }
        for &t in &created {
            let [u, v, _] = self.tris[t].v;
            self.tris[t].n[0] = by_start[&v];
            self.tris[t].n[1] = by_end[&u];
        }
        // Rotate ghosts so the infinite vertex sits last. Neighbor pointers
        // refer to triangles, not slots within them, so this is local.
        for &t in &created {
            let tri = &mut self.tris[t];
            if let Some(r) = tri.v.iter().position(|&x| x == GHOST) {
                let r = (r + 1) % 3;
                tri.v = [tri.v[r], tri.v[(r + 1) % 3], tri.v[(r + 2) % 3]];
                tri.n = [tri.n[r], tri.n[(r + 1) % 3], tri.n[(r + 2) % 3]];
            } else {
                self.last = t;
            }
        }
    }
}

/// Delaunay triangulation of `points`. Returns counter-clockwise vertex
/// index triples.
///
/// Fails on fewer than three points, non-finite or duplicate coordinates,
/// or when every point lies on one line.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let mut seen = HashSet::with_capacity(points.len());
    for (k, p) in points.iter().enumerate() {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::InvalidParameter(format!("point {k} is not finite")));
        }
        // `+ 0.0` folds -0.0 into 0.0.
        if !seen.insert(((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits())) {
            return Err(Error::Degenerate(format!(
                "duplicate point {k} at ({}, {})",
                p[0], p[1]
            )));
        }
    }
    let mut b = Builder {
        pts: points,
        tris: Vec::with_capacity(2 * points.len() + 4),
        free: Vec::new(),
        last: 0,
    };
    let third = (2..points.len())
        .find(|&k| b.orient(0, 1, k) != 0.0)
        .ok_or_else(|| Error::Degenerate("all points are collinear".into()))?;
    let (a, c) = (0, third);
    let bb = 1;
    let (a, bb) = if b.orient(a, bb, c) > 0.0 {
        (a, bb)
    } else {
        (bb, a)
    };

    // Real triangle 0 plus the three ghosts across its edges.
    b.tris.push(Tri {
        v: [a, bb, c],
        n: [2, 3, 1],
        alive: true,
    });
    b.tris.push(Tri {
        v: [bb, a, GHOST],
        n: [3, 2, 0],
        alive: true,
    });
    b.tris.push(Tri {
        v: [c, bb, GHOST],
        n: [1, 3, 0],
        alive: true,
    });
    b.tris.push(Tri {
        v: [a, c, GHOST],
        n: [2, 1, 0],
        alive: true,
    });

    for p in 2..points.len() {
        if p != third {
            b.insert(p);
        }
    }

    Ok(b.tris
        .iter()
        .filter(|t| t.alive && !t.is_ghost())
        .map(|t| t.v)
        .collect())
}
