//! Sampled X-ray spectra and basis-material attenuation tables.
//!
//! Spectrum CSV files have the header `energy_kev,weight`; material CSV files
//! have `energy_kev,phi,theta` where `phi` is the bone and `theta` the water
//! mass attenuation coefficient.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPACING_TOL: f64 = 1e-9;

/// Approximate tungsten-anode spectra (1 mm Cu) and bone/water tables bundled with the crate.
pub mod bundled {
    use super::*;

    pub const SPECTRUM_80KV: &str = include_str!("../data/spectrum_80kv_approx.csv");
    pub const SPECTRUM_140KV: &str = include_str!("../data/spectrum_140kv_approx.csv");
    pub const BONE_WATER: &str = include_str!("../data/bone_water_approx.csv");

    /// 80 kV spectrum (low energy).
    pub fn low() -> SpectrumTable {
        parse_spectrum(SPECTRUM_80KV.as_bytes(), "spectrum_80kv_approx.csv", "low-80kV")
            .expect("bundled table is valid")
    }

    /// 140 kV spectrum (high energy).
    pub fn high() -> SpectrumTable {
        parse_spectrum(SPECTRUM_140KV.as_bytes(), "spectrum_140kv_approx.csv", "high-140kV")
            .expect("bundled table is valid")
    }

    pub fn materials() -> MaterialTable {
        parse_materials(BONE_WATER.as_bytes(), "bone_water_approx.csv").expect("bundled table is valid")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub label: String,
    /// Bin centers in keV.
    pub energies: Vec<f64>,
    pub weights: Vec<f64>,
    /// Bin width in keV.
    pub delta_e: f64,
}

impl SpectrumTable {
    pub fn new(label: impl Into<String>, energies: Vec<f64>, weights: Vec<f64>, delta_e: f64) -> Result<Self> {
        let table = SpectrumTable {
            label: label.into(),
            energies,
            weights,
            delta_e,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.energies.is_empty() || self.energies.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "spectrum {}: {} energies vs {} weights",
                self.label,
                self.energies.len(),
                self.weights.len()
            )));
        }
        if !(self.delta_e > 0.0 && self.delta_e.is_finite()) {
            return Err(Error::invalid(format!("spectrum {}: bin width must be > 0", self.label)));
        }
        for (i, w) in self.energies.windows(2).enumerate() {
            if (w[1] - w[0] - self.delta_e).abs() > SPACING_TOL {
                return Err(Error::invalid(format!(
                    "spectrum {}: bin {} breaks uniform spacing {}",
                    self.label,
                    i + 1,
                    self.delta_e
                )));
            }
        }
        if let Some(i) = self.weights.iter().position(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("spectrum {}: bin {i} has invalid weight", self.label)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// `sum_m S_m * delta_E`.
    pub fn area(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.delta_e
    }

    /// Rescales the weights to unit area.
    pub fn normalize(&self) -> Result<SpectrumTable> {
        let area = self.area();
        if !(area > 0.0) {
            return Err(Error::invalid(format!("spectrum {} has zero area", self.label)));
        }
        Ok(SpectrumTable {
            weights: self.weights.iter().map(|w| w / area).collect(),
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialTable {
    pub energies: Vec<f64>,
    /// Basis 1 (bone) mass attenuation per bin.
    pub phi: Vec<f64>,
    /// Basis 2 (water) mass attenuation per bin.
    pub theta: Vec<f64>,
}

impl MaterialTable {
    pub fn new(energies: Vec<f64>, phi: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        let t = MaterialTable { energies, phi, theta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.energies.len();
        if n == 0 || self.phi.len() != n || self.theta.len() != n {
            return Err(Error::invalid("material table columns have inconsistent lengths"));
        }
        if !self.energies.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid("material energies must be strictly increasing"));
        }
        for (name, col) in [("phi", &self.phi), ("theta", &self.theta)] {
            if let Some(i) = col.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!("material {name} at bin {i} must be > 0")));
            }
            if let Some(i) = col.windows(2).position(|w| w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "material {name} increases between bins {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Linear interpolation of both columns at `e`; `None` outside the table.
    pub fn interpolate(&self, e: f64) -> Option<(f64, f64)> {
        let first = self.energies[0];
        let last = *self.energies.last().unwrap();
        if e < first - SPACING_TOL || e > last + SPACING_TOL {
            return None;
        }
        let e = e.clamp(first, last);
        let hi = self.energies.partition_point(|&x| x < e);
        if hi < self.energies.len() && self.energies[hi] == e {
            return Some((self.phi[hi], self.theta[hi]));
        }
        let lo = hi - 1;
        let t = (e - self.energies[lo]) / (self.energies[hi] - self.energies[lo]);
        let lerp = |v: &[f64]| v[lo] + t * (v[hi] - v[lo]);
        Some((lerp(&self.phi), lerp(&self.theta)))
    }
}

#[derive(Deserialize)]
struct SpectrumRow {
    energy_kev: f64,
    weight: f64,
}

#[derive(Deserialize)]
struct MaterialRow {
    energy_kev: f64,
    phi: f64,
    theta: f64,
}

fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(reader: R, name: &str, header: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found = rdr
        .headers()
        .map_err(|e| table_err(name, 1, e.to_string()))?
        .clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(table_err(name, 1, format!("expected header {}", header.join(","))));
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| table_err(name, i + 2, e.to_string())))
        .collect()
}

fn table_err(name: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Table {
        path: name.to_string(),
        row,
        message: message.into(),
    }
}

/// Parses a spectrum CSV. Row numbers in errors are file line numbers.
pub fn parse_spectrum<R: Read>(reader: R, name: &str, label: &str) -> Result<SpectrumTable> {
    let rows: Vec<SpectrumRow> = read_rows(reader, name, &["energy_kev", "weight"])?;
    if rows.len() < 2 {
        return Err(table_err(name, rows.len() + 1, "need at least two rows to infer the bin width"));
    }
    let delta_e = rows[1].energy_kev - rows[0].energy_kev;
    if !(delta_e > 0.0) {
        return Err(table_err(name, 3, "energies must be strictly increasing"));
    }
    for (i, r) in rows.iter().enumerate() {
        let line = i + 2;
        if !r.energy_kev.is_finite() || !r.weight.is_finite() {
            return Err(table_err(name, line, "non-finite value"));
        }
        if r.weight < 0.0 {
            return Err(table_err(name, line, format!("negative weight {}", r.weight)));
        }
        if i > 0 {
            let step = r.energy_kev - rows[i - 1].energy_kev;
            if step <= 0.0 {
                return Err(table_err(name, line, "energies must be strictly increasing"));
            }
            if (step - delta_e).abs() > SPACING_TOL {
                return Err(table_err(name, line, format!("non-uniform spacing {step} vs {delta_e}")));
            }
        }
    }
    SpectrumTable::new(
        label,
        rows.iter().map(|r| r.energy_kev).collect(),
        rows.iter().map(|r| r.weight).collect(),
        delta_e,
    )
}

pub fn parse_materials<R: Read>(reader: R, name: &str) -> Result<MaterialTable> {
    let rows: Vec<MaterialRow> = read_rows(reader, name, &["energy_kev", "phi", "theta"])?;
    for (i, pair) in rows.windows(2).enumerate() {
        if pair[1].energy_kev <= pair[0].energy_kev {
            return Err(table_err(name, i + 3, "energies must be strictly increasing"));
        }
    }
    for (i, r) in rows.iter().enumerate() {
        if !(r.phi > 0.0 && r.theta > 0.0 && r.phi.is_finite() && r.theta.is_finite()) {
            return Err(table_err(name, i + 2, "attenuation coefficients must be positive"));
        }
    }
    MaterialTable::new(
        rows.iter().map(|r| r.energy_kev).collect(),
        rows.iter().map(|r| r.phi).collect(),
        rows.iter().map(|r| r.theta).collect(),
    )
}

/// Loads a spectrum table without normalizing it. The label is the file stem.
pub fn load_spectrum(path: &Path) -> Result<SpectrumTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_spectrum(file, &path.display().to_string(), &label)
}

pub fn load_materials(path: &Path) -> Result<MaterialTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_materials(file, &path.display().to_string())
}

pub fn normalize(spec: &SpectrumTable) -> Result<SpectrumTable> {
    spec.normalize()
}

/// Restricts `spec` to its support (first to last positive bin) and samples
/// the material table on the retained bin centers.
pub fn align(spec: &SpectrumTable, mat: &MaterialTable) -> Result<(SpectrumTable, MaterialTable)> {
    spec.validate()?;
    let first = spec
        .weights
        .iter()
        .position(|&w| w > 0.0)
        .ok_or_else(|| Error::invalid(format!("spectrum {} has no positive bin", spec.label)))?;
    let last = spec.weights.iter().rposition(|&w| w > 0.0).unwrap();
    let energies = spec.energies[first..=last].to_vec();
    let mut phi = Vec::with_capacity(energies.len());
    let mut theta = Vec::with_capacity(energies.len());
    for &e in &energies {
        let (p, t) = mat.interpolate(e).ok_or_else(|| {
            Error::Misaligned(format!(
                "material table [{}, {}] keV does not cover spectrum bin {e} keV",
                mat.energies[0],
                mat.energies.last().unwrap()
            ))
        })?;
        phi.push(p);
        theta.push(t);
    }
    let spec = SpectrumTable {
        label: spec.label.clone(),
        energies: energies.clone(),
        weights: spec.weights[first..=last].to_vec(),
        delta_e: spec.delta_e,
    };
    Ok((spec, MaterialTable { energies, phi, theta }))
}

/// One spectrum on its own material samples, ready for projection: per-bin
/// weights `S_m * delta_E` with the matching `phi_m`, `theta_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralChannel {
    pub weights: Vec<f64>,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
}

impl SpectralChannel {
    /// Pairs an already aligned spectrum with its material table.
    pub fn new(spec: &SpectrumTable, mat: &MaterialTable) -> Result<Self> {
        spec.validate()?;
        if spec.energies.len() != mat.energies.len()
            || spec
                .energies
                .iter()
                .zip(&mat.energies)
                .any(|(a, b)| (a - b).abs() > SPACING_TOL)
        {
            return Err(Error::Misaligned(format!(
                "spectrum {} and material table sample different energies",
                spec.label
            )));
        }
        Ok(SpectralChannel {
            weights: spec.weights.iter().map(|w| w * spec.delta_e).collect(),
            phi: mat.phi.clone(),
            theta: mat.theta.clone(),
        })
    }

    /// Normalizes and aligns `spec` against `mat`.
    pub fn prepare(spec: &SpectrumTable, mat: &MaterialTable) -> Result<Self> {
        let (s, m) = align(&spec.normalize()?, mat)?;
        Self::new(&s, &m)
    }

    /// Single energy bin with unit weight.
    pub fn monochromatic(phi: f64, theta: f64) -> Self {
        SpectralChannel {
            weights: vec![1.0],
            phi: vec![phi],
            theta: vec![theta],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.weights.len()
    }

    /// Spectrum-weighted mean attenuation `(sum w phi, sum w theta)`.
    pub fn mean_attenuation(&self) -> (f64, f64) {
        let p = self.weights.iter().zip(&self.phi).map(|(w, p)| w * p).sum();
        let t = self.weights.iter().zip(&self.theta).map(|(w, t)| w * t).sum();
        (p, t)
    }
}
