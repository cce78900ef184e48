//! Georeferenced rasters, masks and the sparse point sets derived from them.
//!
//! Cell `(i, j)` is column `i` (west to east) and row `j` (south to north).
//! World coordinates refer to cell centers:
//! `x = origin_x + i * cell_size_x`, `y = origin_y + j * cell_size_y`.
//! The ESRI ASCII grid body is stored north-to-south on disk, so the first
//! body line is row `j = nrows - 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Sentinel written for missing cells when no other value was read.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Axis-aligned world rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Shape and georeferencing shared by rasters, masks and point grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub cell_size_x: f64,
    pub cell_size_y: f64,
    /// World x of the center of cell (0, 0).
    pub origin_x: f64,
    /// World y of the center of cell (0, 0).
    pub origin_y: f64,
}

impl GridGeometry {
    pub fn new(
        width: usize,
        height: usize,
        cell_size_x: f64,
        cell_size_y: f64,
        origin_x: f64,
        origin_y: f64,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(cell_size_x > 0.0 && cell_size_y > 0.0)
            || !cell_size_x.is_finite()
            || !cell_size_y.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "cell sizes must be positive, got {cell_size_x} x {cell_size_y}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            cell_size_x,
            cell_size_y,
            origin_x,
            origin_y,
        })
    }

    /// Square-celled geometry whose lower-left outer corner sits at `(min_x, min_y)`.
    pub fn from_corner(
        width: usize,
        height: usize,
        cell_size: f64,
        min_x: f64,
        min_y: f64,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            cell_size,
            cell_size,
            min_x + 0.5 * cell_size,
            min_y + 0.5 * cell_size,
        )
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.width && j < self.height);
        j * self.width + i
    }

    #[inline]
    pub fn cell_of_index(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    #[inline]
    pub fn cell_to_world(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin_x + i as f64 * self.cell_size_x,
            self.origin_y + j as f64 * self.cell_size_y,
        )
    }

    /// Cell whose center is nearest to `(x, y)`, or `None` outside the outer extent.
    pub fn world_to_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.extent().contains(x, y) {
            return None;
        }
        Some(self.nearest_cell(x, y))
    }

    /// Nearest cell center, clamped into the grid. Exact half-way ties go to
    /// the higher index.
    pub fn nearest_cell(&self, x: f64, y: f64) -> (usize, usize) {
        let fi = ((x - self.origin_x) / self.cell_size_x + 0.5).floor();
        let fj = ((y - self.origin_y) / self.cell_size_y + 0.5).floor();
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v as usize).min(n - 1)
            }
        };
        (clamp(fi, self.width), clamp(fj, self.height))
    }

    /// Outer extent including the half cell around the border centers.
    pub fn extent(&self) -> Extent {
        Extent {
            min_x: self.origin_x - 0.5 * self.cell_size_x,
            min_y: self.origin_y - 0.5 * self.cell_size_y,
            max_x: self.origin_x + (self.width as f64 - 0.5) * self.cell_size_x,
            max_y: self.origin_y + (self.height as f64 - 0.5) * self.cell_size_y,
        }
    }

    pub fn same_shape(&self, other: &GridGeometry) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn require_same_shape(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }
}

/// Elevation raster. Missing cells are held as NaN internally and written
/// back using `nodata_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    geometry: GridGeometry,
    values: Vec<f64>,
    nodata_value: f64,
}

impl Raster {
    /// Builds a raster from row-major values (`values[j * width + i]`), NaN
    /// marking missing cells.
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(Error::InvalidParameter(
                "raster values must be finite".into(),
            ));
        }
        Ok(Self {
            geometry,
            values,
            nodata_value: DEFAULT_NODATA,
        })
    }

    pub fn filled(geometry: GridGeometry, value: f64) -> Self {
        Self {
            geometry,
            values: vec![value; geometry.len()],
            nodata_value: DEFAULT_NODATA,
        }
    }

    pub fn from_fn(
        geometry: GridGeometry,
        mut f: impl FnMut(usize, usize) -> Option<f64>,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(geometry.len());
        for j in 0..geometry.height {
            for i in 0..geometry.width {
                values.push(f(i, j).unwrap_or(f64::NAN));
            }
        }
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn nodata_value(&self) -> f64 {
        self.nodata_value
    }

    pub fn with_nodata_value(mut self, nodata: f64) -> Self {
        self.nodata_value = nodata;
        self
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.values[self.geometry.index(i, j)];
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) {
        let idx = self.geometry.index(i, j);
        self.values[idx] = value.unwrap_or(f64::NAN);
    }

    /// Raw row-major values, NaN for NODATA.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn parse_ascii(text: &str) -> Result<Self> {
        let (geometry, values, nodata) = parse_ascii_grid(text)?;
        Ok(Self::new(geometry, values)?.with_nodata_value(nodata.unwrap_or(DEFAULT_NODATA)))
    }

    pub fn to_ascii_string(&self) -> Result<String> {
        format_ascii_grid(&self.geometry, &self.values, Some(self.nodata_value))
    }
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Raster::parse_ascii(&text)
}

pub fn save_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster.to_ascii_string()?).map_err(|e| Error::io(path, e))
}

/// Binary mask sharing a raster's geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    geometry: GridGeometry,
    bits: Vec<bool>,
}

// GridGeometry holds f64s; equality on them is exact and intended here.
impl Eq for GridGeometry {}

impl Mask {
    pub fn new(geometry: GridGeometry, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != geometry.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} mask bits, got {}",
                geometry.len(),
                bits.len()
            )));
        }
        Ok(Self { geometry, bits })
    }

    pub fn filled(geometry: GridGeometry, value: bool) -> Self {
        Self {
            geometry,
            bits: vec![value; geometry.len()],
        }
    }

    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(geometry.len());
        for j in 0..geometry.height {
            for i in 0..geometry.width {
                bits.push(f(i, j));
            }
        }
        Self { geometry, bits }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[self.geometry.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        let idx = self.geometry.index(i, j);
        self.bits[idx] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Bit of the cell nearest to a world position (clamped to the grid).
    pub fn sample_nearest(&self, x: f64, y: f64) -> bool {
        let (i, j) = self.geometry.nearest_cell(x, y);
        self.get(i, j)
    }

    pub fn parse_ascii(text: &str) -> Result<Self> {
        let (geometry, values, _) = parse_ascii_grid(text)?;
        let bits = values.iter().map(|v| !v.is_nan() && *v != 0.0).collect();
        Self::new(geometry, bits)
    }

    pub fn to_ascii_string(&self) -> Result<String> {
        let values: Vec<f64> = self
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        format_ascii_grid(&self.geometry, &values, None)
    }
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Mask::parse_ascii(&text)
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, mask.to_ascii_string()?).map_err(|e| Error::io(path, e))
}

/// Nearest-neighbor resampling of `mask` onto `target`.
///
/// The outer extents must agree to within half a source cell on every side.
pub fn resample_mask(mask: &Mask, target: &GridGeometry) -> Result<Mask> {
    let src = mask.geometry();
    let (a, b) = (src.extent(), target.extent());
    let tol_x = 0.5 * src.cell_size_x;
    let tol_y = 0.5 * src.cell_size_y;
    let off = [
        (a.min_x - b.min_x).abs() > tol_x,
        (a.max_x - b.max_x).abs() > tol_x,
        (a.min_y - b.min_y).abs() > tol_y,
        (a.max_y - b.max_y).abs() > tol_y,
    ];
    if off.iter().any(|&o| o) {
        return Err(Error::ExtentMismatch(format!(
            "mask extent [{}, {}]x[{}, {}] vs target [{}, {}]x[{}, {}]",
            a.min_x, a.max_x, a.min_y, a.max_y, b.min_x, b.max_x, b.min_y, b.max_y
        )));
    }
    Ok(Mask::from_fn(*target, |i, j| {
        let (x, y) = target.cell_to_world(i, j);
        mask.sample_nearest(x, y)
    }))
}

/// One cell of a point set: indices plus world position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Sparse set of at most one point per raster cell, kept in row-major
/// (south-to-north, west-to-east) scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid {
    geometry: GridGeometry,
    points: Vec<GridPoint>,
    lookup: Vec<u32>,
}

const EMPTY_SLOT: u32 = u32::MAX;

impl PointGrid {
    pub fn empty(geometry: GridGeometry) -> Self {
        Self {
            geometry,
            points: Vec::new(),
            lookup: vec![EMPTY_SLOT; geometry.len()],
        }
    }

    pub fn from_cells(
        geometry: GridGeometry,
        cells: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut cells: Vec<(usize, usize, f64)> = cells.into_iter().collect();
        for &(i, j, z) in &cells {
            if i >= geometry.width || j >= geometry.height {
                return Err(Error::InvalidParameter(format!(
                    "cell ({i}, {j}) outside grid"
                )));
            }
            if !z.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite elevation at ({i}, {j})"
                )));
            }
        }
        cells.sort_by_key(|&(i, j, _)| geometry.index(i, j));
        let mut grid = Self::empty(geometry);
        grid.points.reserve(cells.len());
        for (i, j, z) in cells {
            let idx = geometry.index(i, j);
            if grid.lookup[idx] != EMPTY_SLOT {
                return Err(Error::InvalidParameter(format!(
                    "duplicate point at ({i}, {j})"
                )));
            }
            let (x, y) = geometry.cell_to_world(i, j);
            grid.lookup[idx] = grid.points.len() as u32;
            grid.points.push(GridPoint { i, j, x, y, z });
        }
        Ok(grid)
    }

    /// Every valid raster cell where `keep(i, j)` holds.
    pub fn from_raster(raster: &Raster, mut keep: impl FnMut(usize, usize) -> bool) -> Self {
        let g = *raster.geometry();
        let mut grid = Self::empty(g);
        for j in 0..g.height {
            for i in 0..g.width {
                if let Some(z) = raster.get(i, j) {
                    if keep(i, j) {
                        let (x, y) = g.cell_to_world(i, j);
                        grid.lookup[g.index(i, j)] = grid.points.len() as u32;
                        grid.points.push(GridPoint { i, j, x, y, z });
                    }
                }
            }
        }
        grid
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GridPoint> {
        self.points.iter()
    }

    /// Position of the point at cell `(i, j)` within [`Self::points`].
    #[inline]
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        let slot = self.lookup[self.geometry.index(i, j)];
        (slot != EMPTY_SLOT).then_some(slot as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&GridPoint> {
        self.index_of(i, j).map(|k| &self.points[k])
    }

    /// Keeps the points whose position in [`Self::points`] passes `keep`.
    pub fn retain_indices(&self, mut keep: impl FnMut(usize) -> bool) -> PointGrid {
        let mut out = Self::empty(self.geometry);
        for (k, p) in self.points.iter().enumerate() {
            if keep(k) {
                out.lookup[self.geometry.index(p.i, p.j)] = out.points.len() as u32;
                out.points.push(*p);
            }
        }
        out
    }

    pub fn occupancy(&self) -> Mask {
        Mask::from_fn(self.geometry, |i, j| self.index_of(i, j).is_some())
    }

    /// Raster holding the point elevations, NODATA elsewhere.
    pub fn to_raster(&self) -> Raster {
        let mut values = vec![f64::NAN; self.geometry.len()];
        for p in &self.points {
            values[self.geometry.index(p.i, p.j)] = p.z;
        }
        Raster {
            geometry: self.geometry,
            values,
            nodata_value: DEFAULT_NODATA,
        }
    }
}

/// Road points: valid DSM cells under a set mask bit.
pub fn extract_road_points(dsm: &Raster, mask: &Mask) -> Result<PointGrid> {
    dsm.geometry()
        .require_same_shape(mask.geometry(), "road mask vs DSM")?;
    Ok(PointGrid::from_raster(dsm, |i, j| mask.get(i, j)))
}

/// Terrain points: valid DTM cells where the cleaned road mask is unset.
pub fn extract_terrain_points(dtm: &Raster, road_mask_plus: &Mask) -> Result<PointGrid> {
    dtm.geometry()
        .require_same_shape(road_mask_plus.geometry(), "road mask vs DTM")?;
    Ok(PointGrid::from_raster(dtm, |i, j| {
        !road_mask_plus.get(i, j)
    }))
}

fn parse_ascii_grid(text: &str) -> Result<(GridGeometry, Vec<f64>, Option<f64>)> {
    let mut ncols: Option<usize> = None;
    let mut nrows: Option<usize> = None;
    let mut xll: Option<(f64, bool)> = None;
    let mut yll: Option<(f64, bool)> = None;
    let mut cellsize: Option<f64> = None;
    let mut nodata: Option<f64> = None;

    let mut lines = text.lines().enumerate().peekable();
    while let Some(&(n, line)) = lines.peek() {
        let line_no = n + 1;
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else {
            lines.next();
            continue;
        };
        if !key.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            break;
        }
        let value = tokens
            .next()
            .ok_or_else(|| Error::parse(line_no, format!("missing value for `{key}`")))?;
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::parse(line_no, format!("invalid number `{v}` for `{key}`")))
        };
        let count = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("invalid count `{v}` for `{key}`")))
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(count(value)?),
            "nrows" => nrows = Some(count(value)?),
            "xllcorner" => xll = Some((num(value)?, false)),
            "yllcorner" => yll = Some((num(value)?, false)),
            "xllcenter" => xll = Some((num(value)?, true)),
            "yllcenter" => yll = Some((num(value)?, true)),
            "cellsize" => cellsize = Some(num(value)?),
            "nodata_value" => nodata = Some(num(value)?),
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("unknown header key `{other}`"),
                ))
            }
        }
        lines.next();
    }

    let missing = |k: &str| Error::parse(1, format!("header is missing `{k}`"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let (xll, x_center) = xll.ok_or_else(|| missing("xllcorner"))?;
    let (yll, y_center) = yll.ok_or_else(|| missing("yllcorner"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let ox = if x_center { xll } else { xll + 0.5 * cellsize };
    let oy = if y_center { yll } else { yll + 0.5 * cellsize };
    let geometry = GridGeometry::new(ncols, nrows, cellsize, cellsize, ox, oy)?;

    let mut values = vec![f64::NAN; geometry.len()];
    let mut row = 0usize;
    for (n, line) in lines {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        if row >= nrows {
            return Err(Error::DimensionMismatch(format!(
                "line {line_no}: more than nrows = {nrows} data rows"
            )));
        }
        let j = nrows - 1 - row;
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            if count >= ncols {
                count += 1;
                continue;
            }
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(line_no, format!("invalid value `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(line_no, format!("non-finite value `{tok}`")));
            }
            if nodata != Some(v) {
                values[geometry.index(count, j)] = v;
            }
            count += 1;
        }
        if count != ncols {
            return Err(Error::DimensionMismatch(format!(
                "line {line_no}: header says ncols = {ncols} but row has {count} values"
            )));
        }
        row += 1;
    }
    if row != nrows {
        return Err(Error::DimensionMismatch(format!(
            "header says nrows = {nrows} but body has {row} rows"
        )));
    }
    Ok((geometry, values, nodata))
}

fn format_ascii_grid(
    geometry: &GridGeometry,
    values: &[f64],
    nodata: Option<f64>,
) -> Result<String> {
    if geometry.cell_size_x != geometry.cell_size_y {
        return Err(Error::InvalidParameter(
            "ESRI ASCII grids require square cells".into(),
        ));
    }
    let ext = geometry.extent();
    let mut out = String::new();
    let _ = writeln!(out, "ncols {}", geometry.width);
    let _ = writeln!(out, "nrows {}", geometry.height);
    let _ = writeln!(out, "xllcorner {}", ext.min_x);
    let _ = writeln!(out, "yllcorner {}", ext.min_y);
    let _ = writeln!(out, "cellsize {}", geometry.cell_size_x);
    let has_missing = values.iter().any(|v| v.is_nan());
    let nodata = match nodata {
        Some(v) => Some(v),
        None if has_missing => Some(DEFAULT_NODATA),
        None => None,
    };
    if let Some(nd) = nodata {
        let _ = writeln!(out, "NODATA_value {nd}");
    }
    for j in (0..geometry.height).rev() {
        let row = &values[j * geometry.width..(j + 1) * geometry.width];
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            if v.is_nan() {
                let _ = write!(out, "{}", nodata.unwrap_or(DEFAULT_NODATA));
            } else {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TWO_BY_TWO: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";

    fn geom(w: usize, h: usize) -> GridGeometry {
        GridGeometry::from_corner(w, h, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn reads_two_by_two_in_file_order() {
        let r = Raster::parse_ascii(TWO_BY_TWO).unwrap();
        assert_eq!((r.width(), r.height()), (2, 2));
        // First body line is the northern row.
        assert_eq!(r.get(0, 1), Some(1.0));
        assert_eq!(r.get(1, 1), Some(2.0));
        assert_eq!(r.get(0, 0), Some(3.0));
        assert_eq!(r.get(1, 0), Some(4.0));
        assert_eq!(r.geometry().cell_to_world(0, 0), (0.5, 0.5));
    }

    #[test]
    fn short_row_is_a_dimension_mismatch() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";
        let err = Raster::parse_ascii(text).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
        assert!(err.to_string().contains("dimension mismatch"));
        assert!(err.to_string().contains("line 6"));
    }

    #[test]
    fn missing_rows_and_bad_tokens() {
        let text = "ncols 2\nnrows 3\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 2\n3 4\n";
        assert!(matches!(
            Raster::parse_ascii(text),
            Err(Error::DimensionMismatch(_))
        ));
        let text = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 x\n3 4\n";
        match Raster::parse_ascii(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
        let text = "ncols 2\nnrows 2\nxllcorner 0\ncellsize 1\n1 2\n3 4\n";
        assert!(matches!(
            Raster::parse_ascii(text),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn nodata_cells_are_missing() {
        let text = "ncols 2\nnrows 2\nxllcenter 10\nyllcenter 20\ncellsize 2\nNODATA_value -9999\n-9999 2\n3 4\n";
        let r = Raster::parse_ascii(text).unwrap();
        assert_eq!(r.get(0, 1), None);
        assert_eq!(r.valid_count(), 3);
        assert_eq!(r.geometry().cell_to_world(1, 1), (12.0, 22.0));
    }

    #[test]
    fn missing_file_reports_not_found() {
        let err = load_raster("/definitely/not/here.asc").unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));
        assert!(err.to_string().starts_with("file not found"));
    }

    #[test]
    fn resample_identity_and_upsample() {
        let g2 = geom(2, 2);
        let m = Mask::from_fn(g2, |i, j| i == j);
        assert_eq!(resample_mask(&m, &g2).unwrap(), m);

        // Upsample 2x2 -> 4x4; brute-force nearest source center per target center.
        let g4 = GridGeometry::from_corner(4, 4, 0.5, 0.0, 0.0).unwrap();
        let up = resample_mask(&m, &g4).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let (x, y) = g4.cell_to_world(i, j);
                let mut best = (f64::INFINITY, false);
                for sj in 0..2 {
                    for si in 0..2 {
                        let (sx, sy) = g2.cell_to_world(si, sj);
                        let d = (sx - x).powi(2) + (sy - y).powi(2);
                        if d < best.0 {
                            best = (d, m.get(si, sj));
                        }
                    }
                }
                assert_eq!(up.get(i, j), best.1);
                assert_eq!(up.get(i, j), m.get(i / 2, j / 2));
            }
        }

        let ones = Mask::filled(geom(3, 5), true);
        let t = GridGeometry::from_corner(7, 11, 3.0 / 7.0, 0.0, 0.0).unwrap();
        // 3/7 * 7 = 3 wide, 11 * 3/7 ≈ 4.71 tall: within half a source cell of 5.
        assert_eq!(resample_mask(&ones, &t).unwrap().count_ones(), 77);
    }

    #[test]
    fn resample_rejects_disjoint_extent() {
        let m = Mask::filled(geom(4, 4), true);
        let far = GridGeometry::from_corner(4, 4, 1.0, 3.0, 0.0).unwrap();
        assert!(matches!(
            resample_mask(&m, &far),
            Err(Error::ExtentMismatch(_))
        ));
    }

    #[test]
    fn road_and_terrain_extraction() {
        let g = geom(3, 3);
        let dsm = Raster::filled(g, 5.0);
        let none = Mask::filled(g, false);
        assert!(extract_road_points(&dsm, &none).unwrap().is_empty());

        let mut one = none.clone();
        one.set(1, 1, true);
        let pts = extract_road_points(&dsm, &one).unwrap();
        assert_eq!(pts.len(), 1);
        let p = pts.points()[0];
        assert_eq!((p.x, p.y, p.z), (0.5 + 1.0, 0.5 + 1.0, 5.0));

        let dtm = Raster::filled(geom(2, 2), 1.0);
        assert!(
            extract_terrain_points(&dtm, &Mask::filled(geom(2, 2), true))
                .unwrap()
                .is_empty()
        );
        assert_eq!(
            extract_terrain_points(&dtm, &Mask::filled(geom(2, 2), false))
                .unwrap()
                .len(),
            4
        );
        assert!(extract_road_points(&dsm, &Mask::filled(geom(2, 2), true)).is_err());
    }

    #[test]
    fn point_grid_rejects_duplicates() {
        let g = geom(3, 3);
        assert!(PointGrid::from_cells(g, [(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(PointGrid::from_cells(g, [(3, 0, 1.0)]).is_err());
        let pg = PointGrid::from_cells(g, [(2, 2, 1.0), (0, 0, 2.0)]).unwrap();
        assert_eq!(pg.points()[0].z, 2.0);
        assert_eq!(pg.index_of(2, 2), Some(1));
    }

    fn raster_strategy() -> impl Strategy<Value = Raster> {
        (
            2usize..8,
            2usize..8,
            0.1f64..5.0,
            -1e5f64..1e5,
            -1e5f64..1e5,
        )
            .prop_flat_map(|(w, h, cs, x0, y0)| {
                proptest::collection::vec(proptest::option::weighted(0.9, -1e4f64..1e4), w * h)
                    .prop_map(move |vals| {
                        let g = GridGeometry::from_corner(w, h, cs, x0, y0).unwrap();
                        let v = vals.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
                        Raster::new(g, v).unwrap()
                    })
            })
    }

    proptest! {
        #[test]
        fn ascii_round_trip(r in raster_strategy()) {
            let back = Raster::parse_ascii(&r.to_ascii_string().unwrap()).unwrap();
            prop_assert_eq!(back.width(), r.width());
            prop_assert_eq!(back.height(), r.height());
            for (a, b) in r.values().iter().zip(back.values()) {
                if a.is_nan() {
                    prop_assert!(b.is_nan());
                } else {
                    prop_assert!((a - b).abs() <= 1e-6);
                }
            }
            let (ga, gb) = (r.geometry(), back.geometry());
            prop_assert!((ga.origin_x - gb.origin_x).abs() < 1e-6);
            prop_assert!((ga.origin_y - gb.origin_y).abs() < 1e-6);
        }

        #[test]
        fn cell_world_mapping_inverts(r in raster_strategy()) {
            let g = r.geometry();
            for j in 0..g.height {
                for i in 0..g.width {
                    let (x, y) = g.cell_to_world(i, j);
                    prop_assert_eq!(g.world_to_cell(x, y), Some((i, j)));
                }
            }
        }

        #[test]
        fn road_count_matches_popcount(bits in proptest::collection::vec(any::<(bool, bool)>(), 36)) {
            let g = geom(6, 6);
            let dsm = Raster::from_fn(g, |i, j| (!bits[j * 6 + i].1).then_some(1.0)).unwrap();
            let mask = Mask::from_fn(g, |i, j| bits[j * 6 + i].0);
            let expected = bits.iter().filter(|(m, nd)| *m && !*nd).count();
            let road = extract_road_points(&dsm, &mask).unwrap();
            prop_assert_eq!(road.len(), expected);
            // Same NODATA pattern in the DTM: road and terrain partition the valid cells.
            let terrain = extract_terrain_points(&dsm, &mask).unwrap();
            prop_assert_eq!(road.len() + terrain.len(), dsm.valid_count());
        }
    }
}
