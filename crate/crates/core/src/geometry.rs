//! Fan-beam acquisition geometry and the ray-driven system matrix.
//!
//! The rotation center sits at the origin. At view angle `beta` the source is
//! at `-D1 * (cos beta, sin beta)` and the flat detector line is centered at
//! `D2 * (cos beta, sin beta)`, perpendicular to the central ray. Detector
//! element `j` is offset laterally by `(j - (n_D - 1) / 2) * l_D` along
//! `(-sin beta, cos beta)`.
//!
//! Images are row-major with row 0 at the top (largest `y`) and column 0 at
//! the left (smallest `x`). Pixel `(row, col)` has flat index `row * n_R + col`.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::tensor::{self, TensorData};
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Acquisition parameters of a fan-beam scanner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub n_s: usize,
    pub n_d: usize,
    /// Detector element pitch.
    pub l_d: f64,
    /// Source-to-object distance.
    pub d1: f64,
    /// Object-to-detector distance.
    pub d2: f64,
    /// View angles in radians, strictly increasing within `[0, 2pi)`.
    pub angles: Vec<f64>,
}

impl FanBeamGeometry {
    /// Full-rotation geometry with `n_s` equally spaced views.
    pub fn new(n_s: usize, n_d: usize, l_d: f64, d1: f64, d2: f64) -> Result<Self> {
        let angles = (0..n_s)
            .map(|i| 2.0 * PI * i as f64 / n_s as f64)
            .collect();
        Self::with_angles(n_d, l_d, d1, d2, angles)
    }

    pub fn with_angles(n_d: usize, l_d: f64, d1: f64, d2: f64, angles: Vec<f64>) -> Result<Self> {
        let geom = FanBeamGeometry {
            n_s: angles.len(),
            n_d,
            l_d,
            d1,
            d2,
            angles,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Scanner used for the simulated experiments: 60 views, 256 detectors.
    pub fn reference() -> Self {
        Self::new(60, 256, 0.2, 490.0, 390.0).expect("reference geometry is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s == 0 || self.n_d == 0 {
            return Err(Error::invalid("geometry needs n_s >= 1 and n_d >= 1"));
        }
        if self.angles.len() != self.n_s {
            return Err(Error::invalid(format!(
                "geometry lists {} angles for n_s = {}",
                self.angles.len(),
                self.n_s
            )));
        }
        if !(self.l_d > 0.0 && self.l_d.is_finite()) {
            return Err(Error::invalid(format!("detector pitch must be > 0, got {}", self.l_d)));
        }
        if !(self.d1 > 0.0 && self.d1.is_finite()) {
            return Err(Error::invalid(format!("D1 must be > 0, got {}", self.d1)));
        }
        if !(self.d2 >= 0.0 && self.d2.is_finite()) {
            return Err(Error::invalid(format!("D2 must be >= 0, got {}", self.d2)));
        }
        let in_range = self.angles.iter().all(|a| (0.0..2.0 * PI).contains(a));
        let increasing = self.angles.windows(2).all(|w| w[0] < w[1]);
        if !in_range || !increasing {
            return Err(Error::invalid(
                "view angles must be strictly increasing within [0, 2pi)",
            ));
        }
        Ok(())
    }

    pub fn n_rays(&self) -> usize {
        self.n_s * self.n_d
    }

    /// Half-length of the detector line.
    pub fn half_length(&self) -> f64 {
        self.n_d as f64 * self.l_d / 2.0
    }

    /// Radius of the disc irradiated from every view.
    pub fn fov_radius(&self) -> f64 {
        let lh = self.half_length();
        let sdd = self.d1 + self.d2;
        self.d1 * lh / (lh * lh + sdd * sdd).sqrt()
    }

    /// Source position and detector-element center for one ray.
    pub fn ray_endpoints(&self, angle_index: usize, detector_index: usize) -> Result<(Point, Point)> {
        if angle_index >= self.n_s {
            return Err(Error::IndexOutOfRange {
                what: "angle_index",
                index: angle_index,
                limit: self.n_s,
            });
        }
        if detector_index >= self.n_d {
            return Err(Error::IndexOutOfRange {
                what: "detector_index",
                index: detector_index,
                limit: self.n_d,
            });
        }
        Ok(self.endpoints_unchecked(angle_index, detector_index))
    }

    fn endpoints_unchecked(&self, angle_index: usize, detector_index: usize) -> (Point, Point) {
        let (sin, cos) = self.angles[angle_index].sin_cos();
        let source = [-self.d1 * cos, -self.d1 * sin];
        let offset = (detector_index as f64 - (self.n_d as f64 - 1.0) / 2.0) * self.l_d;
        let detector = [self.d2 * cos - offset * sin, self.d2 * sin + offset * cos];
        (source, detector)
    }
}

/// Square reconstruction grid centered on the rotation axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub n_r: usize,
    pub pixel_size: f64,
}

impl ImageGrid {
    pub fn new(n_r: usize, pixel_size: f64) -> Result<Self> {
        let grid = ImageGrid { n_r, pixel_size };
        if n_r == 0 {
            return Err(Error::invalid("grid needs n_r >= 1"));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::invalid(format!("pixel size must be > 0, got {pixel_size}")));
        }
        Ok(grid)
    }

    /// Grid whose square exactly circumscribes the FOV disc of `geom`.
    pub fn covering_fov(geom: &FanBeamGeometry, n_r: usize) -> Result<Self> {
        Self::new(n_r, 2.0 * geom.fov_radius() / n_r as f64)
    }

    pub fn n_pixels(&self) -> usize {
        self.n_r * self.n_r
    }

    pub fn half_width(&self) -> f64 {
        self.n_r as f64 * self.pixel_size / 2.0
    }

    /// Physical center of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> Point {
        let h = self.half_width();
        [
            (col as f64 + 0.5) * self.pixel_size - h,
            h - (row as f64 + 0.5) * self.pixel_size,
        ]
    }

    /// Checks that the grid covers the FOV disc of `geom` (up to rounding).
    pub fn check_covers(&self, geom: &FanBeamGeometry) -> Result<()> {
        let need = 2.0 * geom.fov_radius();
        let have = self.n_r as f64 * self.pixel_size;
        if have < need * (1.0 - 1e-12) {
            return Err(Error::invalid(format!(
                "grid width {have} does not cover the FOV diameter {need}"
            )));
        }
        Ok(())
    }
}

/// JSON geometry document (`n_s, n_d, l_d, d1, d2, n_r`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub n_s: usize,
    pub n_d: usize,
    pub l_d: f64,
    pub d1: f64,
    pub d2: f64,
    pub n_r: usize,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec {
            n_s: 60,
            n_d: 256,
            l_d: 0.2,
            d1: 490.0,
            d2: 390.0,
            n_r: 256,
        }
    }
}

impl GeometrySpec {
    pub fn build(&self) -> Result<(FanBeamGeometry, ImageGrid)> {
        let geom = FanBeamGeometry::new(self.n_s, self.n_d, self.l_d, self.d1, self.d2)?;
        let grid = ImageGrid::covering_fov(&geom, self.n_r)?;
        Ok((geom, grid))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Stable identifier of a (geometry, grid) pair.
pub fn geometry_hash(geom: &FanBeamGeometry, grid: &ImageGrid) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        geometry: &'a FanBeamGeometry,
        grid: &'a ImageGrid,
    }
    let bytes = serde_json::to_vec(&Key { geometry: geom, grid }).expect("geometry serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

/// Exact intersection lengths of the segment `a -> b` with the pixels of `grid`.
///
/// Pixel boundaries are half-open towards `+x` and `+y`: a segment running
/// exactly along a grid line is attributed to the pixels on its `+x` (or
/// `+y`) side, and a segment on the outer `+x`/`+y` edge misses the grid.
pub fn trace_segment(grid: &ImageGrid, a: Point, b: Point) -> Vec<(u32, f64)> {
    let h = grid.half_width();
    let ps = grid.pixel_size;
    let n = grid.n_r;
    let d = [b[0] - a[0], b[1] - a[1]];
    let length = d[0].hypot(d[1]);
    if length == 0.0 {
        return Vec::new();
    }

    let mut alpha_min = 0.0f64;
    let mut alpha_max = 1.0f64;
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if !(a[axis] >= -h && a[axis] < h) {
                return Vec::new();
            }
        } else {
            let t0 = (-h - a[axis]) / d[axis];
            let t1 = (h - a[axis]) / d[axis];
            alpha_min = alpha_min.max(t0.min(t1));
            alpha_max = alpha_max.min(t0.max(t1));
        }
    }
    if alpha_min >= alpha_max {
        return Vec::new();
    }

    // Next plane crossing along each axis, addressed by plane index so the
    // parametric positions do not accumulate rounding.
    let plane_alpha = |axis: usize, k: i64| (-h + k as f64 * ps - a[axis]) / d[axis];
    let mut next_plane = [0i64; 2];
    let mut step = [0i64; 2];
    let mut next_alpha = [f64::INFINITY; 2];
    for axis in 0..2 {
        if d[axis] == 0.0 {
            continue;
        }
        let entry = (a[axis] + alpha_min * d[axis] + h) / ps;
        if d[axis] > 0.0 {
            next_plane[axis] = entry.floor() as i64 + 1;
            step[axis] = 1;
        } else {
            next_plane[axis] = entry.ceil() as i64 - 1;
            step[axis] = -1;
        }
        next_alpha[axis] = plane_alpha(axis, next_plane[axis]);
    }

    let last = (n - 1) as f64;
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(2 * n + 2);
    let mut current = alpha_min;
    while current < alpha_max {
        let axis = if next_alpha[0] <= next_alpha[1] { 0 } else { 1 };
        let next = next_alpha[axis].min(alpha_max);
        if next > current {
            let mid = 0.5 * (current + next);
            let x = a[0] + mid * d[0];
            let y = a[1] + mid * d[1];
            let col = ((x + h) / ps).floor().clamp(0.0, last) as usize;
            let iy = ((y + h) / ps).floor().clamp(0.0, last) as usize;
            let row = n - 1 - iy;
            let seg = (next - current) * length;
            let idx = (row * n + col) as u32;
            match out.last_mut() {
                Some(last_entry) if last_entry.0 == idx => last_entry.1 += seg,
                _ => out.push((idx, seg)),
            }
            current = next;
        }
        if next_alpha[axis] <= current {
            next_plane[axis] += step[axis];
            next_alpha[axis] = plane_alpha(axis, next_plane[axis]);
        }
    }
    out
}

/// Borrowed view of one sparse row.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub indices: &'a [u32],
    pub weights: &'a [f64],
    /// Cached squared Euclidean norm of the row.
    pub norm_sq: f64,
}

impl Row<'_> {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn dot(&self, image: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.weights)
            .map(|(&j, &w)| w * image[j as usize])
            .sum()
    }

    /// `image += scale * row`.
    pub fn axpy(&self, scale: f64, image: &mut [f64]) {
        for (&j, &w) in self.indices.iter().zip(self.weights) {
            image[j as usize] += scale * w;
        }
    }

    pub fn chord_length(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Sparse fan-beam system matrix in compressed-row form, rows in angle-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMatrix {
    n_views: usize,
    n_detectors: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    indices: Vec<u32>,
    weights: Vec<f64>,
    row_norms: Vec<f64>,
    grid: ImageGrid,
    key: String,
}

impl ProjectionMatrix {
    pub fn build(geom: &FanBeamGeometry, grid: &ImageGrid) -> Result<Self> {
        geom.validate()?;
        ImageGrid::new(grid.n_r, grid.pixel_size)?;
        let rows: Vec<Vec<(u32, f64)>> = (0..geom.n_rays())
            .into_par_iter()
            .map(|l| {
                let (s, d) = geom.endpoints_unchecked(l / geom.n_d, l % geom.n_d);
                trace_segment(grid, s, d)
            })
            .collect();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        let mut row_norms = Vec::with_capacity(rows.len());
        row_ptr.push(0);
        for row in rows {
            row_norms.push(row.iter().map(|&(_, w)| w * w).sum());
            for (j, w) in row {
                indices.push(j);
                weights.push(w);
            }
            row_ptr.push(indices.len());
        }
        Ok(ProjectionMatrix {
            n_views: geom.n_s,
            n_detectors: geom.n_d,
            n_cols: grid.n_pixels(),
            row_ptr,
            indices,
            weights,
            row_norms,
            grid: *grid,
            key: geometry_hash(geom, grid),
        })
    }

    /// Loads the matrix for `(geom, grid)` from `cache_dir`, building and
    /// storing it on a miss.
    pub fn load_or_build(geom: &FanBeamGeometry, grid: &ImageGrid, cache_dir: &Path) -> Result<Self> {
        let key = geometry_hash(geom, grid);
        let base = cache_dir.join(format!("matrix-{key}"));
        let paths = [
            base.with_extension("ptr.tsr"),
            base.with_extension("idx.tsr"),
            base.with_extension("val.tsr"),
        ];
        if paths.iter().all(|p| p.exists()) {
            if let Ok(m) = Self::read_cached(&paths, geom, grid, &key) {
                return Ok(m);
            }
        }
        let m = Self::build(geom, grid)?;
        std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
        let ptr: Vec<u32> = m.row_ptr.iter().map(|&p| p as u32).collect();
        tensor::write_any(&paths[0], &[ptr.len()], &TensorData::U32(ptr))?;
        tensor::write_any(&paths[1], &[m.indices.len()], &TensorData::U32(m.indices.clone()))?;
        tensor::write_any(&paths[2], &[m.weights.len()], &TensorData::F64(m.weights.clone()))?;
        Ok(m)
    }

    fn read_cached(paths: &[std::path::PathBuf; 3], geom: &FanBeamGeometry, grid: &ImageGrid, key: &str) -> Result<Self> {
        let (_, ptr) = tensor::read_any(&paths[0])?;
        let (_, idx) = tensor::read_any(&paths[1])?;
        let (_, val) = tensor::read_any(&paths[2])?;
        let (TensorData::U32(ptr), TensorData::U32(indices), TensorData::F64(weights)) = (ptr, idx, val) else {
            return Err(Error::invalid("cached matrix has unexpected dtypes"));
        };
        let row_ptr: Vec<usize> = ptr.into_iter().map(|p| p as usize).collect();
        let consistent = row_ptr.len() == geom.n_rays() + 1
            && row_ptr.last() == Some(&indices.len())
            && indices.len() == weights.len()
            && row_ptr.windows(2).all(|w| w[0] <= w[1])
            && indices.iter().all(|&j| (j as usize) < grid.n_pixels());
        if !consistent {
            return Err(Error::invalid("cached matrix is inconsistent with its geometry"));
        }
        let row_norms = row_ptr
            .windows(2)
            .map(|w| weights[w[0]..w[1]].iter().map(|x| x * x).sum())
            .collect();
        Ok(ProjectionMatrix {
            n_views: geom.n_s,
            n_detectors: geom.n_d,
            n_cols: grid.n_pixels(),
            row_ptr,
            indices,
            weights,
            row_norms,
            grid: *grid,
            key: key.to_string(),
        })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn n_rows(&self) -> usize {
        self.row_norms.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    /// Hash of the geometry and grid this matrix was built for.
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn row(&self, l: usize) -> Row<'_> {
        let span = self.row_ptr[l]..self.row_ptr[l + 1];
        Row {
            indices: &self.indices[span.clone()],
            weights: &self.weights[span],
            norm_sq: self.row_norms[l],
        }
    }

    pub fn row_norms(&self) -> &[f64] {
        &self.row_norms
    }

    /// `R u`.
    pub fn forward(&self, image: &[f64]) -> Vec<f64> {
        assert_eq!(image.len(), self.n_cols, "image length");
        (0..self.n_rows())
            .into_par_iter()
            .map(|l| self.row(l).dot(image))
            .collect()
    }

    /// `R^T v`, accumulated row by row in a fixed order.
    pub fn adjoint(&self, sino: &[f64]) -> Vec<f64> {
        assert_eq!(sino.len(), self.n_rows(), "sinogram length");
        let mut out = vec![0.0; self.n_cols];
        for (l, &v) in sino.iter().enumerate() {
            if v != 0.0 {
                self.row(l).axpy(v, &mut out);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fov_radius_reference_geometry() {
        let g = FanBeamGeometry::reference();
        let lh: f64 = 25.6;
        let expect = 490.0 * lh / (lh * lh + 880.0f64 * 880.0).sqrt();
        assert!((g.fov_radius() - expect).abs() < 1e-12);
        assert!((g.fov_radius() - 14.2485).abs() < 5e-5);
    }

    #[test]
    fn fov_radius_degenerate_cases() {
        // L_H = D1, D2 = 0 -> D1 / sqrt(2)
        let g = FanBeamGeometry::new(4, 100, 1.0, 50.0, 0.0).unwrap();
        assert!((g.fov_radius() - 50.0 / 2f64.sqrt()).abs() < 1e-12);
        let tiny = FanBeamGeometry::new(4, 256, 1e-9, 490.0, 390.0).unwrap();
        assert!(tiny.fov_radius() < 1e-6);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(FanBeamGeometry::new(0, 10, 0.2, 1.0, 1.0).is_err());
        assert!(FanBeamGeometry::new(4, 10, 0.0, 1.0, 1.0).is_err());
        assert!(FanBeamGeometry::new(4, 10, 0.2, -1.0, 1.0).is_err());
        assert!(FanBeamGeometry::with_angles(10, 0.2, 1.0, 1.0, vec![0.5, 0.1]).is_err());
        assert!(FanBeamGeometry::with_angles(10, 0.2, 1.0, 1.0, vec![0.0, 7.0]).is_err());
    }

    #[test]
    fn endpoints_at_angle_zero() {
        let g = FanBeamGeometry::new(4, 4, 0.5, 10.0, 5.0).unwrap();
        let (s, d) = g.ray_endpoints(0, 1).unwrap();
        assert_eq!(s, [-10.0, 0.0]);
        assert!((d[0] - 5.0).abs() < 1e-15);
        assert!((d[1] + 0.25).abs() < 1e-15);
        let (_, d2) = g.ray_endpoints(0, 2).unwrap();
        assert!((d2[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn endpoints_symmetries() {
        let g = FanBeamGeometry::new(8, 7, 0.3, 20.0, 10.0).unwrap();
        let (s0, _) = g.ray_endpoints(1, 0).unwrap();
        let (s4, _) = g.ray_endpoints(5, 0).unwrap();
        assert!((s0[0] + s4[0]).abs() < 1e-12 && (s0[1] + s4[1]).abs() < 1e-12);
        // detectors 0 and n_D - 1 mirror across the source-O axis
        let (s, d0) = g.ray_endpoints(3, 0).unwrap();
        let (_, d6) = g.ray_endpoints(3, 6).unwrap();
        let axis = [-s[0] / 20.0, -s[1] / 20.0];
        let mid = [(d0[0] + d6[0]) / 2.0, (d0[1] + d6[1]) / 2.0];
        assert!((mid[0] - 10.0 * axis[0]).abs() < 1e-12);
        assert!((mid[1] - 10.0 * axis[1]).abs() < 1e-12);
        assert!(g.ray_endpoints(8, 0).is_err());
        assert!(g.ray_endpoints(0, 7).is_err());
    }

    #[test]
    fn single_pixel_chord() {
        let grid = ImageGrid::new(1, 2.0).unwrap();
        let row = trace_segment(&grid, [-5.0, 0.0], [5.0, 0.0]);
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, 0);
        assert!((row[0].1 - 2.0).abs() < 1e-14);
        let diag = trace_segment(&grid, [-5.0, -5.0], [5.0, 5.0]);
        assert_eq!(diag.len(), 1);
        assert!((diag[0].1 - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ray_outside_grid_is_empty() {
        let grid = ImageGrid::new(4, 1.0).unwrap();
        assert!(trace_segment(&grid, [-5.0, 3.0], [5.0, 3.0]).is_empty());
        assert!(trace_segment(&grid, [-5.0, -5.0], [-3.0, 5.0]).is_empty());
        // a segment that stops before reaching the grid
        assert!(trace_segment(&grid, [-9.0, 0.1], [-3.0, 0.1]).is_empty());
    }

    #[test]
    fn gridline_ties_go_to_positive_side() {
        let grid = ImageGrid::new(4, 1.0).unwrap();
        // vertical ray along x = 0: column 2 (the +x side)
        let row = trace_segment(&grid, [0.0, -5.0], [0.0, 5.0]);
        let cols: Vec<u32> = row.iter().map(|(j, _)| j % 4).collect();
        assert_eq!(cols, vec![2, 2, 2, 2]);
        // horizontal ray along y = 0: image row 1 (the +y side, row 0 is the top)
        let row = trace_segment(&grid, [-5.0, 0.0], [5.0, 0.0]);
        assert!(row.iter().all(|(j, _)| j / 4 == 1));
        // outer +x edge misses, outer -x edge hits
        assert!(trace_segment(&grid, [2.0, -5.0], [2.0, 5.0]).is_empty());
        assert_eq!(trace_segment(&grid, [-2.0, -5.0], [-2.0, 5.0]).len(), 4);
    }

    #[test]
    fn row_norms_are_cached() {
        let geom = FanBeamGeometry::new(6, 16, 0.2, 49.0, 39.0).unwrap();
        let grid = ImageGrid::covering_fov(&geom, 8).unwrap();
        let m = ProjectionMatrix::build(&geom, &grid).unwrap();
        for l in 0..m.n_rows() {
            let r = m.row(l);
            let direct: f64 = r.weights.iter().map(|w| w * w).sum();
            assert!((r.norm_sq - direct).abs() <= 1e-12 * direct.max(1e-300));
            assert!(r.weights.iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn matrix_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let geom = FanBeamGeometry::new(5, 12, 0.2, 49.0, 39.0).unwrap();
        let grid = ImageGrid::covering_fov(&geom, 6).unwrap();
        let built = ProjectionMatrix::load_or_build(&geom, &grid, dir.path()).unwrap();
        let loaded = ProjectionMatrix::load_or_build(&geom, &grid, dir.path()).unwrap();
        assert_eq!(built, loaded);
        let other = ImageGrid::covering_fov(&geom, 7).unwrap();
        assert_ne!(geometry_hash(&geom, &grid), geometry_hash(&geom, &other));
    }
}
