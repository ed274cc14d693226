//! Polychromatic dual-spectrum projection and Poisson measurement noise.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::tensor;
use crate::error::{Error, Result};
use crate::geometry::ProjectionMatrix;
use crate::phantom::ImagePair;
use crate::spectra::SpectralChannel;

/// Photons per ray used for the low-dose simulations.
pub const DEFAULT_I0: f64 = 1e5;

/// Low- and high-energy log-projections, each `n_s x n_d` in angle-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SinogramPair {
    pub n_s: usize,
    pub n_d: usize,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub geometry_hash: String,
}

impl SinogramPair {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_s * self.n_d;
        if self.p1.len() != n || self.p2.len() != n {
            return Err(Error::Shape(format!(
                "sinograms hold {} and {} values, expected {n}",
                self.p1.len(),
                self.p2.len()
            )));
        }
        for (name, p) in [("p1", &self.p1), ("p2", &self.p2)] {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sinogram {name}")));
            }
        }
        Ok(())
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        match k {
            0 => &self.p1,
            _ => &self.p2,
        }
    }
}

/// `-ln sum_m w_m exp(-phi_m x1 - theta_m x2)`, evaluated with the smallest
/// exponent factored out so no term underflows to zero.
pub fn log_projection(ch: &SpectralChannel, x1: f64, x2: f64) -> f64 {
    let shift = ch
        .phi
        .iter()
        .zip(&ch.theta)
        .map(|(p, t)| p * x1 + t * x2)
        .fold(f64::INFINITY, f64::min);
    let sum: f64 = ch
        .weights
        .iter()
        .zip(ch.phi.iter().zip(&ch.theta))
        .map(|(w, (p, t))| w * (-(p * x1 + t * x2 - shift)).exp())
        .sum();
    shift - sum.ln()
}

fn check_grid(pair: &ImagePair, matrix: &ProjectionMatrix) -> Result<()> {
    if pair.grid != *matrix.grid() {
        return Err(Error::GridMismatch(format!(
            "image grid {:?} vs matrix grid {:?}",
            pair.grid,
            matrix.grid()
        )));
    }
    Ok(())
}

/// Noise-free projections of `pair` under both spectra.
pub fn forward_project(
    pair: &ImagePair,
    matrix: &ProjectionMatrix,
    low: &SpectralChannel,
    high: &SpectralChannel,
) -> Result<SinogramPair> {
    check_grid(pair, matrix)?;
    pair.validate()?;
    let x1 = matrix.forward(&pair.f);
    let x2 = matrix.forward(&pair.g);
    let project = |ch: &SpectralChannel| -> Vec<f64> {
        x1.par_iter()
            .zip(&x2)
            .map(|(&a, &b)| log_projection(ch, a, b))
            .collect()
    };
    let sino = SinogramPair {
        n_s: matrix.n_views(),
        n_d: matrix.n_detectors(),
        p1: project(low),
        p2: project(high),
        geometry_hash: matrix.key().to_string(),
    };
    sino.validate()?;
    Ok(sino)
}

fn entry_rng(seed: u64, channel: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((channel << 48) | index);
    rng
}

/// Photon counts `N ~ Poisson(i0 * exp(-p))`, one independent stream per entry.
pub fn sample_counts(p: &[f64], i0: f64, seed: u64, channel: u64) -> Vec<f64> {
    p.par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mean = i0 * (-v).exp();
            if !(mean > 0.0) {
                return 0.0;
            }
            let mut rng = entry_rng(seed, channel, i as u64);
            Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(0.0)
        })
        .collect()
}

/// Replaces every entry by `-ln(max(N, 1) / i0)` with `N ~ Poisson(i0 * exp(-p))`.
pub fn add_poisson_noise(sino: &SinogramPair, i0: f64, seed: u64) -> Result<SinogramPair> {
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(Error::invalid(format!("photon count must be > 0, got {i0}")));
    }
    let noisy = |p: &[f64], k: u64| -> Vec<f64> {
        sample_counts(p, i0, seed, k)
            .into_iter()
            .map(|n| -(n.max(1.0) / i0).ln())
            .collect()
    };
    Ok(SinogramPair {
        p1: noisy(&sino.p1, 0),
        p2: noisy(&sino.p2, 1),
        ..sino.clone()
    })
}

/// Sidecar written next to persisted sinograms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinogramMeta {
    pub geometry_hash: String,
    pub spectra_hashes: Vec<String>,
    pub i0: Option<f64>,
    pub seed: Option<u64>,
}

/// Writes `p1.tsr`, `p2.tsr` and `sinogram.json` into `dir`.
pub fn write_sinograms(dir: &Path, sino: &SinogramPair, meta: &SinogramMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shape = [sino.n_s, sino.n_d];
    tensor::write_f64_as_f32(&dir.join("p1.tsr"), &shape, &sino.p1)?;
    tensor::write_f64_as_f32(&dir.join("p2.tsr"), &shape, &sino.p2)?;
    let json = serde_json::to_vec_pretty(meta)?;
    tensor::write_atomic(&dir.join("sinogram.json"), &json)
}

pub fn read_sinograms(dir: &Path) -> Result<(SinogramPair, SinogramMeta)> {
    let meta_path = dir.join("sinogram.json");
    let text = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: SinogramMeta = serde_json::from_slice(&text)?;
    let (s1, p1) = tensor::read_as_f64(&dir.join("p1.tsr"))?;
    let (s2, p2) = tensor::read_as_f64(&dir.join("p2.tsr"))?;
    if s1.len() != 2 || s1 != s2 {
        return Err(Error::Shape(format!("sinogram shapes {s1:?} and {s2:?}")));
    }
    let sino = SinogramPair {
        n_s: s1[0],
        n_d: s1[1],
        p1,
        p2,
        geometry_hash: meta.geometry_hash.clone(),
    };
    sino.validate()?;
    Ok((sino, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{FanBeamGeometry, ImageGrid};
    use crate::phantom::EllipseSpec;
    use crate::spectra::bundled;

    fn setup(n_r: usize) -> (FanBeamGeometry, ImageGrid, ProjectionMatrix) {
        let geom = FanBeamGeometry::new(12, 32, 0.2, 49.0, 39.0).unwrap();
        let grid = ImageGrid::covering_fov(&geom, n_r).unwrap();
        let m = ProjectionMatrix::build(&geom, &grid).unwrap();
        (geom, grid, m)
    }

    fn channels() -> (SpectralChannel, SpectralChannel) {
        let mat = bundled::materials();
        (
            SpectralChannel::prepare(&bundled::low(), &mat).unwrap(),
            SpectralChannel::prepare(&bundled::high(), &mat).unwrap(),
        )
    }

    fn disc(grid: &ImageGrid, r: f64, v: f64) -> Vec<f64> {
        crate::phantom::rasterize(
            grid,
            &[EllipseSpec {
                center: [0.0, 0.0],
                semi_axes: [r, r],
                rotation: 0.0,
                intensity: v,
            }],
        )
    }

    #[test]
    fn zero_object_projects_to_zero() {
        let (_, grid, m) = setup(16);
        let (lo, hi) = channels();
        let s = forward_project(&ImagePair::zeros(grid), &m, &lo, &hi).unwrap();
        assert!(s.p1.iter().chain(&s.p2).all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn monochromatic_reduces_to_line_integral() {
        let (_, grid, m) = setup(16);
        let pair = ImagePair::new(grid, disc(&grid, 1.0, 1.2), disc(&grid, 1.3, 0.9)).unwrap();
        let lo = SpectralChannel::monochromatic(0.4, 0.2);
        let hi = SpectralChannel::monochromatic(0.2, 0.17);
        let s = forward_project(&pair, &m, &lo, &hi).unwrap();
        let x1 = m.forward(&pair.f);
        let x2 = m.forward(&pair.g);
        for l in 0..m.n_rows() {
            let e1 = 0.4 * x1[l] + 0.2 * x2[l];
            assert!((s.p1[l] - e1).abs() <= 1e-12 * e1.abs().max(1.0));
        }
    }

    #[test]
    fn monochromatic_superposition() {
        let (_, grid, m) = setup(16);
        let ch = SpectralChannel::monochromatic(0.3, 0.25);
        let a = ImagePair::new(grid, disc(&grid, 1.0, 1.0), disc(&grid, 0.5, 2.0)).unwrap();
        let b = ImagePair::new(grid, disc(&grid, 1.5, 0.3), disc(&grid, 1.2, 0.7)).unwrap();
        let sum = ImagePair::new(
            grid,
            a.f.iter().zip(&b.f).map(|(x, y)| x + y).collect(),
            a.g.iter().zip(&b.g).map(|(x, y)| x + y).collect(),
        )
        .unwrap();
        let pa = forward_project(&a, &m, &ch, &ch).unwrap();
        let pb = forward_project(&b, &m, &ch, &ch).unwrap();
        let ps = forward_project(&sum, &m, &ch, &ch).unwrap();
        for l in 0..m.n_rows() {
            let lin = pa.p1[l] + pb.p1[l];
            assert!((ps.p1[l] - lin).abs() <= 1e-12 * lin.abs().max(1.0));
        }
    }

    #[test]
    fn beam_hardening_is_below_linear_prediction() {
        let (_, grid, m) = setup(16);
        let (lo, _) = channels();
        let pair = ImagePair::new(grid, disc(&grid, 1.0, 1.0), disc(&grid, 1.2, 1.0)).unwrap();
        let s = forward_project(&pair, &m, &lo, &lo).unwrap();
        let (mp, mt) = lo.mean_attenuation();
        let x1 = m.forward(&pair.f);
        let x2 = m.forward(&pair.g);
        for l in 0..m.n_rows() {
            let linear = mp * x1[l] + mt * x2[l];
            if x1[l] + x2[l] > 0.0 {
                assert!(s.p1[l] < linear, "ray {l}: {} vs {linear}", s.p1[l]);
            }
        }
    }

    #[test]
    fn stable_for_extreme_attenuation() {
        let (lo, _) = channels();
        let p = log_projection(&lo, 1e4, 1e4);
        assert!(p.is_finite() && p > 1e3);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let (_, _, m) = setup(16);
        let (lo, hi) = channels();
        let other = ImageGrid::new(16, 1.0).unwrap();
        assert!(matches!(
            forward_project(&ImagePair::zeros(other), &m, &lo, &hi),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn noise_is_deterministic_and_vanishes_at_high_dose() {
        let (_, grid, m) = setup(16);
        let (lo, hi) = channels();
        let pair = ImagePair::new(grid, disc(&grid, 1.0, 1.0), disc(&grid, 1.2, 1.0)).unwrap();
        let clean = forward_project(&pair, &m, &lo, &hi).unwrap();
        let a = add_poisson_noise(&clean, DEFAULT_I0, 5).unwrap();
        let b = add_poisson_noise(&clean, DEFAULT_I0, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, add_poisson_noise(&clean, DEFAULT_I0, 6).unwrap());
        let hi_dose = add_poisson_noise(&clean, 1e9, 5).unwrap();
        let n = clean.p1.len() as f64;
        let rms = (clean
            .p1
            .iter()
            .zip(&hi_dose.p1)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!(rms < 1e-4, "{rms}");
        assert!(add_poisson_noise(&clean, 0.0, 1).is_err());
    }

    #[test]
    fn zero_mean_count_mean_at_p_zero() {
        let p = vec![0.0; 10_000];
        let counts = sample_counts(&p, DEFAULT_I0, 11, 0);
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let se = (DEFAULT_I0 / counts.len() as f64).sqrt();
        assert!((mean - DEFAULT_I0).abs() < 5.0 * se, "{mean}");
    }

    #[test]
    fn zero_counts_stay_finite() {
        let sino = SinogramPair {
            n_s: 1,
            n_d: 3,
            p1: vec![50.0, 800.0, 0.0],
            p2: vec![1e6, 30.0, 0.0],
            geometry_hash: String::new(),
        };
        let noisy = add_poisson_noise(&sino, 10.0, 3).unwrap();
        assert!(noisy.p1.iter().chain(&noisy.p2).all(|v| v.is_finite()));
        assert_eq!(noisy.p1[1], -(1.0f64 / 10.0).ln());
    }

    #[test]
    fn sinogram_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sino = SinogramPair {
            n_s: 2,
            n_d: 2,
            p1: vec![0.5, 1.0, 1.5, 2.0],
            p2: vec![0.25, 0.5, 0.75, 1.0],
            geometry_hash: "abc".into(),
        };
        let meta = SinogramMeta {
            geometry_hash: "abc".into(),
            spectra_hashes: vec!["x".into(), "y".into()],
            i0: Some(1e5),
            seed: Some(4),
        };
        write_sinograms(dir.path(), &sino, &meta).unwrap();
        let (back, m) = read_sinograms(dir.path()).unwrap();
        assert_eq!(back, sino);
        assert_eq!(m, meta);
    }
}
