//! Rational B-spline surfaces.
//!
//! Basis functions follow the Cox-de Boor recursion, evaluated with the
//! triangular scheme that only touches the `p + 1` functions that are nonzero
//! on a knot span. Surfaces are tied to a world rectangle through an affine
//! map so that they can be rasterized onto elevation grids: `x` runs along
//! `u`, `y` along `v`.
//!
//! Control points are stored `i`-major: point `(i, j)` lives at
//! `i * count_v + j`, with `i` indexing the `u` direction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Extent, GridGeometry, Raster};

/// Clamped knot vector on `[0, 1]` with uniformly spaced interior knots.
pub fn clamped_uniform_knots(count: usize, degree: usize) -> Result<Vec<f64>> {
    if count < degree + 1 {
        return Err(Error::InvalidParameter(format!(
            "{count} control points cannot carry a degree-{degree} basis"
        )));
    }
    let spans = count - degree;
    let mut knots = Vec::with_capacity(count + degree + 1);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    for k in 1..spans {
        knots.push(k as f64 / spans as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    Ok(knots)
}

/// Parameter domain `[knots[p], knots[len - p - 1]]`.
pub fn knot_domain(knots: &[f64], degree: usize) -> (f64, f64) {
    (knots[degree], knots[knots.len() - degree - 1])
}

/// Index `s` of the half-open span `[knots[s], knots[s + 1])` containing `u`;
/// the domain end belongs to the last nonempty span.
pub fn find_span(knots: &[f64], degree: usize, u: f64) -> Result<usize> {
    let (lo, hi) = knot_domain(knots, degree);
    if !(u >= lo && u <= hi) {
        return Err(Error::OutOfDomain {
            value: u,
            min: lo,
            max: hi,
        });
    }
    let last = knots.len() - degree - 2;
    if u >= hi {
        let mut s = last;
        while s > degree && knots[s] >= knots[s + 1] {
            s -= 1;
        }
        return Ok(s);
    }
    // Largest s in [degree, last] with knots[s] <= u.
    let (mut a, mut b) = (degree, last + 1);
    while b - a > 1 {
        let mid = (a + b) / 2;
        if knots[mid] <= u {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(a)
}

/// The nonzero basis functions at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpan {
    pub span: usize,
    /// `values[r]` is `N_{span - degree + r}`.
    pub values: Vec<f64>,
}

impl BasisSpan {
    /// Index of the first nonzero basis function.
    pub fn first(&self) -> usize {
        self.span + 1 - self.values.len()
    }
}

pub fn basis_functions(knots: &[f64], degree: usize, u: f64) -> Result<BasisSpan> {
    let span = find_span(knots, degree, u)?;
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for d in 1..=degree {
        left[d] = u - knots[span + 1 - d];
        right[d] = knots[span + d] - u;
        let mut saved = 0.0;
        for r in 0..d {
            let denom = right[r + 1] + left[d - r];
            // 0/0 := 0
            let t = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * t;
            saved = left[d - r] * t;
        }
        n[d] = saved;
    }
    Ok(BasisSpan { span, values: n })
}

/// Active control block and partial derivatives of `S_z` at one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGradient {
    pub first_u: usize,
    pub first_v: usize,
    pub len_u: usize,
    pub len_v: usize,
    /// `S_z(u, v)`.
    pub z: f64,
    /// `∂S_z/∂P_ij|z`, row-major over the active block.
    pub d_control_z: Vec<f64>,
    /// `∂S_z/∂w_ij`, row-major over the active block.
    pub d_weight: Vec<f64>,
}

impl SurfaceGradient {
    /// `(i, j, ∂S_z/∂P_ij|z, ∂S_z/∂w_ij)` over the active block.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.len_u).flat_map(move |a| {
            (0..self.len_v).map(move |b| {
                let k = a * self.len_v + b;
                (
                    self.first_u + a,
                    self.first_v + b,
                    self.d_control_z[k],
                    self.d_weight[k],
                )
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NurbsSurface {
    degree_u: usize,
    degree_v: usize,
    count_u: usize,
    count_v: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    control: Vec<[f64; 3]>,
    weights: Vec<f64>,
    extent: Extent,
    xy_frozen: bool,
}

fn check_knots(knots: &[f64], count: usize, degree: usize, axis: &str) -> Result<()> {
    if knots.len() != count + degree + 1 {
        return Err(Error::InvalidParameter(format!(
            "knots_{axis}: expected {} knots for {count} points of degree {degree}, got {}",
            count + degree + 1,
            knots.len()
        )));
    }
    if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(format!(
            "knots_{axis} must be finite and non-decreasing"
        )));
    }
    let (head, tail) = (&knots[..=degree], &knots[knots.len() - degree - 1..]);
    if head.iter().any(|&k| k != head[0]) || tail.iter().any(|&k| k != tail[0]) {
        return Err(Error::InvalidParameter(format!(
            "knots_{axis} must be clamped"
        )));
    }
    if !(tail[0] > head[0]) {
        return Err(Error::InvalidParameter(format!(
            "knots_{axis} has an empty domain"
        )));
    }
    Ok(())
}

impl NurbsSurface {
    /// General surface with free 3D control points. `extent` is the world
    /// rectangle mapped onto the parameter domain.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        degree_u: usize,
        degree_v: usize,
        count_u: usize,
        count_v: usize,
        knots_u: Vec<f64>,
        knots_v: Vec<f64>,
        control: Vec<[f64; 3]>,
        weights: Vec<f64>,
        extent: Extent,
    ) -> Result<Self> {
        check_knots(&knots_u, count_u, degree_u, "u")?;
        check_knots(&knots_v, count_v, degree_v, "v")?;
        let n = count_u * count_v;
        if control.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} control points and weights, got {} and {}",
                control.len(),
                weights.len()
            )));
        }
        if control.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "control points must be finite".into(),
            ));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        if !(extent.width() > 0.0 && extent.height() > 0.0) {
            return Err(Error::InvalidParameter(
                "surface extent must have positive area".into(),
            ));
        }
        Ok(Self {
            degree_u,
            degree_v,
            count_u,
            count_v,
            knots_u,
            knots_v,
            control,
            weights,
            extent,
            xy_frozen: false,
        })
    }

    /// Surface whose control XY sit on a uniform lattice spanning `extent`
    /// (corners included), with uniform clamped knots and unit weights.
    /// Only control elevations and weights are meant to change afterwards.
    pub fn frozen_lattice(
        extent: Extent,
        count_u: usize,
        count_v: usize,
        degree_u: usize,
        degree_v: usize,
        mut z: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        if count_u < 2 || count_v < 2 {
            return Err(Error::InvalidParameter(
                "control grid must be at least 2x2".into(),
            ));
        }
        let knots_u = clamped_uniform_knots(count_u, degree_u)?;
        let knots_v = clamped_uniform_knots(count_v, degree_v)?;
        let mut control = Vec::with_capacity(count_u * count_v);
        for i in 0..count_u {
            for j in 0..count_v {
                let x = extent.min_x + extent.width() * i as f64 / (count_u - 1) as f64;
                let y = extent.min_y + extent.height() * j as f64 / (count_v - 1) as f64;
                control.push([x, y, z(i, j)]);
            }
        }
        let weights = vec![1.0; count_u * count_v];
        let mut s = Self::new(
            degree_u, degree_v, count_u, count_v, knots_u, knots_v, control, weights, extent,
        )?;
        s.xy_frozen = true;
        Ok(s)
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.degree_u, self.degree_v)
    }

    /// Number of control points along `u` and `v`.
    pub fn counts(&self) -> (usize, usize) {
        (self.count_u, self.count_v)
    }

    pub fn len(&self) -> usize {
        self.control.len()
    }

    pub fn is_empty(&self) -> bool {
        self.control.is_empty()
    }

    pub fn knots_u(&self) -> &[f64] {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &[f64] {
        &self.knots_v
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    pub fn xy_frozen(&self) -> bool {
        self.xy_frozen
    }

    #[inline]
    pub fn control_index(&self, i: usize, j: usize) -> usize {
        i * self.count_v + j
    }

    pub fn control(&self, i: usize, j: usize) -> [f64; 3] {
        self.control[self.control_index(i, j)]
    }

    pub fn control_points(&self) -> &[[f64; 3]] {
        &self.control
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[self.control_index(i, j)]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn control_z(&self) -> Vec<f64> {
        self.control.iter().map(|c| c[2]).collect()
    }

    pub fn set_control_z(&mut self, i: usize, j: usize, z: f64) {
        let k = self.control_index(i, j);
        self.control[k][2] = z;
    }

    pub fn set_control_z_all(&mut self, z: &[f64]) {
        assert_eq!(z.len(), self.control.len());
        for (c, &v) in self.control.iter_mut().zip(z) {
            c[2] = v;
        }
    }

    /// Replaces all weights.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch("weight count".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be positive".into()));
        }
        self.weights.copy_from_slice(weights);
        Ok(())
    }

    pub fn domain_u(&self) -> (f64, f64) {
        knot_domain(&self.knots_u, self.degree_u)
    }

    pub fn domain_v(&self) -> (f64, f64) {
        knot_domain(&self.knots_v, self.degree_v)
    }

    /// Affine image of a world position in the parameter domain. Positions a
    /// hair outside the extent (rounding) are clamped onto it.
    pub fn param_of_world(&self, x: f64, y: f64) -> (f64, f64) {
        let (u0, u1) = self.domain_u();
        let (v0, v1) = self.domain_v();
        let e = self.extent;
        let tu = (x - e.min_x) / e.width();
        let tv = (y - e.min_y) / e.height();
        let snap = |t: f64| {
            if t < 0.0 && t > -1e-12 {
                0.0
            } else if t > 1.0 && t < 1.0 + 1e-12 {
                1.0
            } else {
                t
            }
        };
        (u0 + snap(tu) * (u1 - u0), v0 + snap(tv) * (v1 - v0))
    }

    fn rational_sum(&self, bu: &BasisSpan, bv: &BasisSpan) -> ([f64; 3], f64) {
        let (fu, fv) = (bu.first(), bv.first());
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for (a, nu) in bu.values.iter().enumerate() {
            let row = (fu + a) * self.count_v;
            for (b, nv) in bv.values.iter().enumerate() {
                let k = row + fv + b;
                let c = nu * nv * self.weights[k];
                den += c;
                for (acc, p) in num.iter_mut().zip(&self.control[k]) {
                    *acc += c * p;
                }
            }
        }
        (num, den)
    }

    pub fn evaluate(&self, u: f64, v: f64) -> Result<[f64; 3]> {
        let bu = basis_functions(&self.knots_u, self.degree_u, u)?;
        let bv = basis_functions(&self.knots_v, self.degree_v, v)?;
        let (num, den) = self.rational_sum(&bu, &bv);
        Ok([num[0] / den, num[1] / den, num[2] / den])
    }

    /// Elevation at a world position through the affine parameter map.
    pub fn elevation_at(&self, x: f64, y: f64) -> Result<f64> {
        let (u, v) = self.param_of_world(x, y);
        Ok(self.evaluate(u, v)?[2])
    }

    pub fn gradients(&self, u: f64, v: f64) -> Result<SurfaceGradient> {
        let bu = basis_functions(&self.knots_u, self.degree_u, u)?;
        let bv = basis_functions(&self.knots_v, self.degree_v, v)?;
        Ok(self.gradients_with_basis(&bu, &bv))
    }

    pub(crate) fn gradients_with_basis(&self, bu: &BasisSpan, bv: &BasisSpan) -> SurfaceGradient {
        let (num, den) = self.rational_sum(bu, bv);
        let z = num[2] / den;
        let (lu, lv) = (bu.values.len(), bv.values.len());
        let (fu, fv) = (bu.first(), bv.first());
        let mut d_control_z = Vec::with_capacity(lu * lv);
        let mut d_weight = Vec::with_capacity(lu * lv);
        for (a, nu) in bu.values.iter().enumerate() {
            for (b, nv) in bv.values.iter().enumerate() {
                let k = (fu + a) * self.count_v + fv + b;
                let nn = nu * nv;
                d_control_z.push(nn * self.weights[k] / den);
                d_weight.push(nn * (self.control[k][2] - z) / den);
            }
        }
        SurfaceGradient {
            first_u: fu,
            first_v: fv,
            len_u: lu,
            len_v: lv,
            z,
            d_control_z,
            d_weight,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "flexroad-nurbs 1");
        let _ = writeln!(s, "degree {} {}", self.degree_u, self.degree_v);
        let _ = writeln!(s, "count {} {}", self.count_u, self.count_v);
        let e = self.extent;
        let _ = writeln!(s, "extent {} {} {} {}", e.min_x, e.min_y, e.max_x, e.max_y);
        let _ = writeln!(s, "xy_frozen {}", u8::from(self.xy_frozen));
        let join = |k: &[f64]| {
            k.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(s, "knots_u {}", join(&self.knots_u));
        let _ = writeln!(s, "knots_v {}", join(&self.knots_v));
        let _ = writeln!(s, "control");
        for (c, w) in self.control.iter().zip(&self.weights) {
            let _ = writeln!(s, "{} {} {} {}", c[0], c[1], c[2], w);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |key: &str| -> Result<(usize, Vec<&str>)> {
            let (n, line) = lines.next().ok_or_else(|| {
                Error::parse(0, format!("unexpected end of file, expected `{key}`"))
            })?;
            let mut toks = line.split_whitespace();
            let head = toks.next().unwrap_or_default();
            if head != key {
                return Err(Error::parse(n, format!("expected `{key}`, found `{head}`")));
            }
            Ok((n, toks.collect()))
        };
        fn nums<T: std::str::FromStr>(
            n: usize,
            toks: &[&str],
            want: Option<usize>,
        ) -> Result<Vec<T>> {
            if let Some(w) = want {
                if toks.len() != w {
                    return Err(Error::parse(
                        n,
                        format!("expected {w} values, found {}", toks.len()),
                    ));
                }
            }
            toks.iter()
                .map(|t| {
                    t.parse::<T>()
                        .map_err(|_| Error::parse(n, format!("invalid number `{t}`")))
                })
                .collect()
        }

        let (n, v) = next("flexroad-nurbs")?;
        if v != ["1"] {
            return Err(Error::parse(n, "unsupported surface format version"));
        }
        let (n, v) = next("degree")?;
        let deg: Vec<usize> = nums(n, &v, Some(2))?;
        let (n, v) = next("count")?;
        let cnt: Vec<usize> = nums(n, &v, Some(2))?;
        let (n, v) = next("extent")?;
        let ext: Vec<f64> = nums(n, &v, Some(4))?;
        let (n, v) = next("xy_frozen")?;
        let frozen: Vec<u8> = nums(n, &v, Some(1))?;
        let (n, v) = next("knots_u")?;
        let knots_u: Vec<f64> = nums(n, &v, None)?;
        let (n, v) = next("knots_v")?;
        let knots_v: Vec<f64> = nums(n, &v, None)?;
        next("control")?;
        let total = cnt[0] * cnt[1];
        let mut control = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for _ in 0..total {
            let (n, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("expected {total} control points")))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let v: Vec<f64> = nums(n, &toks, Some(4))?;
            control.push([v[0], v[1], v[2]]);
            weights.push(v[3]);
        }
        if let Some((n, _)) = lines.next() {
            return Err(Error::parse(n, "trailing data after control points"));
        }
        let extent = Extent {
            min_x: ext[0],
            min_y: ext[1],
            max_x: ext[2],
            max_y: ext[3],
        };
        let mut s = Self::new(
            deg[0], deg[1], cnt[0], cnt[1], knots_u, knots_v, control, weights, extent,
        )?;
        s.xy_frozen = frozen[0] != 0;
        Ok(s)
    }
}

pub fn save_surface(surface: &NurbsSurface, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, surface.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_surface(path: impl AsRef<Path>) -> Result<NurbsSurface> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NurbsSurface::from_text(&text)
}

/// Basis functions of every raster column (`u`) and row (`v`). Cells share
/// them because the world-to-parameter map is separable.
#[derive(Debug, Clone)]
pub struct RasterBasis {
    pub columns: Vec<BasisSpan>,
    pub rows: Vec<BasisSpan>,
}

impl RasterBasis {
    pub fn new(surface: &NurbsSurface, template: &GridGeometry) -> Result<Self> {
        let columns = (0..template.width)
            .map(|i| {
                let (x, y) = template.cell_to_world(i, 0);
                let (u, _) = surface.param_of_world(x, y);
                basis_functions(surface.knots_u(), surface.degree_u, u)
            })
            .collect::<Result<_>>()?;
        let rows = (0..template.height)
            .map(|j| {
                let (x, y) = template.cell_to_world(0, j);
                let (_, v) = surface.param_of_world(x, y);
                basis_functions(surface.knots_v(), surface.degree_v, v)
            })
            .collect::<Result<_>>()?;
        Ok(Self { columns, rows })
    }

    /// `S_z` at cell `(i, j)`.
    pub fn elevation(&self, surface: &NurbsSurface, i: usize, j: usize) -> f64 {
        let (num, den) = surface.rational_sum(&self.columns[i], &self.rows[j]);
        num[2] / den
    }
}

/// Samples `S_z` at every cell center of `template`.
pub fn rasterize(surface: &NurbsSurface, template: &GridGeometry) -> Result<Raster> {
    let basis = RasterBasis::new(surface, template)?;
    Raster::from_fn(*template, |i, j| Some(basis.elevation(surface, i, j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct Cox-de Boor recursion with half-open spans; the domain end
    /// is attributed to the last nonempty span.
    fn naive_basis(knots: &[f64], i: usize, p: usize, u: f64, end: f64) -> f64 {
        if p == 0 {
            let (a, b) = (knots[i], knots[i + 1]);
            let inside = (a <= u && u < b) || (u == end && b == end && a < b);
            return if inside { 1.0 } else { 0.0 };
        }
        let mut out = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 != 0.0 {
            out += (u - knots[i]) / d1 * naive_basis(knots, i, p - 1, u, end);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 != 0.0 {
            out += (knots[i + p + 1] - u) / d2 * naive_basis(knots, i + 1, p - 1, u, end);
        }
        out
    }

    fn random_surface(
        rng: &mut ChaCha8Rng,
        nu: usize,
        nv: usize,
        p: usize,
        q: usize,
    ) -> NurbsSurface {
        let extent = Extent {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 10.0,
            max_y: 8.0,
        };
        let mut s =
            NurbsSurface::frozen_lattice(extent, nu, nv, p, q, |_, _| rng.gen_range(-3.0..3.0))
                .unwrap();
        let w: Vec<f64> = (0..nu * nv).map(|_| rng.gen_range(0.3..3.0)).collect();
        s.set_weights(&w).unwrap();
        s
    }

    #[test]
    fn degree_zero_is_indicator() {
        let knots = [0.0, 0.25, 0.5, 1.0];
        let b = basis_functions(&knots, 0, 0.3).unwrap();
        assert_eq!(b.span, 1);
        assert_eq!(b.values, vec![1.0]);
        assert_eq!(basis_functions(&knots, 0, 0.25).unwrap().span, 1);
        assert_eq!(basis_functions(&knots, 0, 1.0).unwrap().span, 2);
    }

    #[test]
    fn clamped_start_interpolates() {
        let knots = clamped_uniform_knots(6, 3).unwrap();
        assert_eq!(
            knots,
            vec![0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0]
        );
        let b = basis_functions(&knots, 3, 0.0).unwrap();
        assert_eq!(b.first(), 0);
        assert_eq!(b.values, vec![1.0, 0.0, 0.0, 0.0]);
        let e = basis_functions(&knots, 3, 1.0).unwrap();
        assert_eq!(e.first(), 2);
        assert_eq!(e.values[3], 1.0);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let knots = clamped_uniform_knots(4, 3).unwrap();
        assert!(matches!(
            basis_functions(&knots, 3, 1.0001),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            basis_functions(&knots, 3, f64::NAN),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn matches_naive_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Non-uniform knots with a repeated interior knot.
        let knots = vec![
            0.0, 0.0, 0.0, 0.0, 0.1, 0.35, 0.35, 0.7, 0.9, 1.0, 1.0, 1.0, 1.0,
        ];
        let count = knots.len() - 4;
        for _ in 0..500 {
            let u: f64 = if rng.gen_bool(0.05) {
                0.35
            } else {
                rng.gen_range(0.0..=1.0)
            };
            let b = basis_functions(&knots, 3, u).unwrap();
            for idx in 0..count {
                let expected = naive_basis(&knots, idx, 3, u, 1.0);
                let got = if idx >= b.first() && idx <= b.span {
                    b.values[idx - b.first()]
                } else {
                    0.0
                };
                assert!(
                    (expected - got).abs() < 1e-12,
                    "u={u} idx={idx}: {expected} vs {got}"
                );
            }
            let sum: f64 = b.values.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(b.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn constant_surface_and_weight_scaling() {
        let ext = Extent {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = NurbsSurface::frozen_lattice(ext, 5, 6, 3, 2, |_, _| 4.25).unwrap();
        let w: Vec<f64> = (0..30).map(|_| rng.gen_range(0.2..5.0)).collect();
        s.set_weights(&w).unwrap();
        for _ in 0..50 {
            let (u, v) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            assert!((s.evaluate(u, v).unwrap()[2] - 4.25).abs() < 1e-12);
        }
        let s = random_surface(&mut rng, 5, 5, 3, 3);
        let mut scaled = s.clone();
        let w: Vec<f64> = s.weights().iter().map(|w| w * 7.5).collect();
        scaled.set_weights(&w).unwrap();
        for _ in 0..50 {
            let (u, v) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            let (a, b) = (s.evaluate(u, v).unwrap(), scaled.evaluate(u, v).unwrap());
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12 * (1.0 + a[k].abs()));
            }
        }
    }

    #[test]
    fn bilinear_midpoint_is_corner_average() {
        let ext = Extent {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 2.0,
            max_y: 2.0,
        };
        let zs = [1.0, 2.0, 4.0, 9.0];
        let s = NurbsSurface::frozen_lattice(ext, 2, 2, 1, 1, |i, j| zs[i * 2 + j]).unwrap();
        let p = s.evaluate(0.5, 0.5).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
        assert!((p[2] - 4.0).abs() < 1e-15);
        // Corners interpolate.
        assert_eq!(s.evaluate(1.0, 0.0).unwrap()[2], 4.0);
    }

    #[test]
    fn rasterize_matches_pointwise_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_surface(&mut rng, 6, 5, 3, 3);
        let template = GridGeometry::from_corner(5, 5, 2.0, 0.0, -1.0).unwrap();
        let mut shifted = s.clone();
        shifted.extent = Extent {
            min_x: 0.0,
            min_y: -1.0,
            max_x: 10.0,
            max_y: 9.0,
        };
        let r = rasterize(&shifted, &template).unwrap();
        for j in 0..5 {
            for i in 0..5 {
                let (x, y) = template.cell_to_world(i, j);
                let (u, v) = ((x - 0.0) / 10.0, (y + 1.0) / 10.0);
                let direct = shifted.evaluate(u, v).unwrap()[2];
                assert!((r.get(i, j).unwrap() - direct).abs() < 1e-12);
            }
        }
        let flat =
            NurbsSurface::frozen_lattice(template.extent(), 4, 4, 3, 3, |_, _| -2.0).unwrap();
        let r = rasterize(&flat, &template).unwrap();
        assert!(r.values().iter().all(|v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn degree_one_hits_control_values_on_aligned_cells() {
        // 5x5 cells of size 1 over [0,5]; a 6x6 degree-1 lattice has nodes at integers,
        // so cell centers fall mid-way between nodes; corners of the extent hit nodes exactly.
        let g = GridGeometry::from_corner(5, 5, 1.0, 0.0, 0.0).unwrap();
        let s = NurbsSurface::frozen_lattice(g.extent(), 6, 6, 1, 1, |i, j| (i * 10 + j) as f64)
            .unwrap();
        assert_eq!(s.elevation_at(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(s.elevation_at(5.0, 5.0).unwrap(), 55.0);
        assert_eq!(s.elevation_at(5.0, 0.0).unwrap(), 50.0);
        let r = rasterize(&s, &g).unwrap();
        assert!((r.get(0, 0).unwrap() - 5.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ext = Extent {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        };
        let s =
            NurbsSurface::frozen_lattice(ext, 6, 6, 3, 3, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let g = s.gradients(0.37, 0.81).unwrap();
        let sum: f64 = g.d_control_z.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert_eq!(g.d_control_z.len(), 16);

        let flat = NurbsSurface::frozen_lattice(ext, 6, 6, 3, 3, |_, _| 2.0).unwrap();
        assert!(flat
            .gradients(0.2, 0.9)
            .unwrap()
            .d_weight
            .iter()
            .all(|&d| d.abs() < 1e-15));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..100 {
            let s = random_surface(&mut rng, 5, 6, 3, 2);
            let (u, v) = (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
            let g = s.gradients(u, v).unwrap();
            for (i, j, dz, dw) in g.iter() {
                let mut plus = s.clone();
                let mut minus = s.clone();
                let z0 = s.control(i, j)[2];
                plus.set_control_z(i, j, z0 + h);
                minus.set_control_z(i, j, z0 - h);
                let fd = (plus.evaluate(u, v).unwrap()[2] - minus.evaluate(u, v).unwrap()[2])
                    / (2.0 * h);
                assert!(
                    (fd - dz).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "dz {fd} vs {dz}"
                );

                let mut wp = s.weights().to_vec();
                let mut wm = wp.clone();
                let k = s.control_index(i, j);
                wp[k] += h;
                wm[k] -= h;
                plus = s.clone();
                minus = s.clone();
                plus.set_weights(&wp).unwrap();
                minus.set_weights(&wm).unwrap();
                let fd = (plus.evaluate(u, v).unwrap()[2] - minus.evaluate(u, v).unwrap()[2])
                    / (2.0 * h);
                assert!(
                    (fd - dw).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "dw {fd} vs {dw}"
                );
            }
        }
    }

    #[test]
    fn local_support() {
        let g = GridGeometry::from_corner(30, 30, 1.0, 0.0, 0.0).unwrap();
        let s = NurbsSurface::frozen_lattice(g.extent(), 8, 8, 3, 3, |_, _| 0.0).unwrap();
        let mut bumped = s.clone();
        bumped.set_control_z(2, 5, 1.0);
        let (a, b) = (rasterize(&s, &g).unwrap(), rasterize(&bumped, &g).unwrap());
        let ku = s.knots_u();
        for j in 0..30 {
            for i in 0..30 {
                let (u, v) = s.param_of_world(g.cell_to_world(i, j).0, g.cell_to_world(i, j).1);
                let inside = u > ku[2] && u < ku[2 + 4] && v > ku[5] && v < ku[5 + 4];
                if !inside {
                    assert_eq!(a.get(i, j), b.get(i, j));
                }
            }
        }
        assert_ne!(a, b);
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_surface(&mut rng, 7, 4, 3, 2);
        let back = NurbsSurface::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert!(NurbsSurface::from_text("flexroad-nurbs 1\ndegree 3\n").is_err());
    }

    #[test]
    fn rejects_invalid_surfaces() {
        let ext = Extent {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        };
        let s = NurbsSurface::frozen_lattice(ext, 4, 4, 3, 3, |_, _| 0.0).unwrap();
        let mut w = s.weights().to_vec();
        w[3] = 0.0;
        assert!(s.clone().set_weights(&w).is_err());
        let bad_knots = vec![0.0, 0.0, 0.5, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert!(NurbsSurface::new(
            3,
            3,
            4,
            4,
            bad_knots,
            s.knots_v().to_vec(),
            s.control_points().to_vec(),
            s.weights().to_vec(),
            ext
        )
        .is_err());
        assert!(NurbsSurface::frozen_lattice(ext, 3, 3, 3, 3, |_, _| 0.0).is_err());
    }
}
