//! Ground-truth density pairs: random ellipse phantoms and externally
//! supplied image pairs.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::tensor;
use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

/// Mean number of ellipses per channel.
pub const ELLIPSE_RATE: f64 = 2.0;
pub const INTENSITY_MEAN: f64 = 1.0;
pub const INTENSITY_STD: f64 = 0.1;

/// Bone (`f`) and water (`g`) density images on one grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub grid: ImageGrid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl ImagePair {
    pub fn new(grid: ImageGrid, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let pair = ImagePair { grid, f, g };
        pair.validate()?;
        Ok(pair)
    }

    pub fn zeros(grid: ImageGrid) -> Self {
        ImagePair {
            grid,
            f: vec![0.0; grid.n_pixels()],
            g: vec![0.0; grid.n_pixels()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n_pixels();
        if self.f.len() != n || self.g.len() != n {
            return Err(Error::Shape(format!(
                "image pair has {} and {} pixels, grid needs {n}",
                self.f.len(),
                self.g.len()
            )));
        }
        for (name, ch) in [("f", &self.f), ("g", &self.g)] {
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("channel {name}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    /// Rotation of the first semi-axis from `+x`, radians.
    pub rotation: f64,
    pub intensity: f64,
}

impl EllipseSpec {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let (a, b) = (self.semi_axes[0], self.semi_axes[1]);
        (u * u) / (a * a) + (v * v) / (b * b) <= 1.0
    }

    /// Conservative containment in the disc of radius `r` about the origin.
    pub fn inside_disc(&self, r: f64) -> bool {
        self.center[0].hypot(self.center[1]) + self.semi_axes[0].max(self.semi_axes[1]) <= r
    }
}

/// Piecewise-constant rasterization: each pixel whose center lies in at least
/// one ellipse takes the largest covering intensity, all others are 0.
pub fn rasterize(grid: &ImageGrid, ellipses: &[EllipseSpec]) -> Vec<f64> {
    let n = grid.n_r;
    let mut out = vec![0.0; grid.n_pixels()];
    if ellipses.is_empty() {
        return out;
    }
    for row in 0..n {
        for col in 0..n {
            let p = grid.pixel_center(row, col);
            let v = ellipses
                .iter()
                .filter(|e| e.contains(p))
                .map(|e| e.intensity)
                .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
            if let Some(v) = v {
                out[row * n + col] = v;
            }
        }
    }
    out
}

/// Draws one channel's ellipse set inside the disc of radius `fov`.
pub fn sample_ellipses<R: Rng + ?Sized>(rng: &mut R, fov: f64) -> Vec<EllipseSpec> {
    let count = Poisson::new(ELLIPSE_RATE).unwrap().sample(rng) as usize;
    let intensity = Normal::new(INTENSITY_MEAN, INTENSITY_STD).unwrap();
    (0..count)
        .map(|_| {
            let value: f64 = intensity.sample(rng);
            let a = rng.random_range(0.1 * fov..=0.5 * fov);
            let b = rng.random_range(0.1 * fov..=0.5 * fov);
            let reach = fov - a.max(b);
            let radius = reach * rng.random::<f64>().sqrt();
            let phase = rng.random_range(0.0..2.0 * PI);
            let rotation = rng.random_range(0.0..PI);
            EllipseSpec {
                center: [radius * phase.cos(), radius * phase.sin()],
                semi_axes: [a, b],
                rotation,
                intensity: value.max(0.0),
            }
        })
        .collect()
}

/// RNG for sample `index` under `seed`; distinct indices get independent streams.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Random ellipse phantom; `f` and `g` use independent ellipse sets.
pub fn generate_phantom(grid: &ImageGrid, fov: f64, seed: u64) -> ImagePair {
    generate_phantom_indexed(grid, fov, seed, 0)
}

pub fn generate_phantom_indexed(grid: &ImageGrid, fov: f64, seed: u64, index: u64) -> ImagePair {
    let mut rng = sample_rng(seed, index);
    let fe = sample_ellipses(&mut rng, fov);
    let ge = sample_ellipses(&mut rng, fov);
    ImagePair {
        grid: *grid,
        f: rasterize(grid, &fe),
        g: rasterize(grid, &ge),
    }
}

/// Target interval for rescaling ingested channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRange {
    pub min: f64,
    pub max: f64,
}

fn rescale(values: &mut [f64], range: DensityRange) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 {
            range.min + (*v - lo) / span * (range.max - range.min)
        } else {
            range.min
        };
    }
}

/// Reads a ground-truth pair from two tensor files of shape `[n_R, n_R]`.
pub fn ingest_image_pair(
    f_path: &Path,
    g_path: &Path,
    grid: &ImageGrid,
    range: Option<DensityRange>,
) -> Result<ImagePair> {
    let expect = vec![grid.n_r, grid.n_r];
    let mut channels = Vec::with_capacity(2);
    for (name, path) in [("f", f_path), ("g", g_path)] {
        let (shape, values) = tensor::read_as_f64(path)?;
        if shape != expect {
            return Err(Error::Shape(format!(
                "channel {name} ({}) has shape {shape:?}, expected {expect:?}",
                path.display()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("channel {name} ({})", path.display())));
        }
        channels.push(values);
    }
    let mut g = channels.pop().unwrap();
    let mut f = channels.pop().unwrap();
    if let Some(r) = range {
        if !(r.max > r.min) {
            return Err(Error::invalid("density range needs max > min"));
        }
        rescale(&mut f, r);
        rescale(&mut g, r);
    }
    ImagePair::new(*grid, f, g)
}
