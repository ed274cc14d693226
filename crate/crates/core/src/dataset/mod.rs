//! Dataset layout, split assignment and the end-to-end build that pairs
//! ground truth with OPMT intermediate solutions.
//!
//! ```text
//! <root>/manifest.json
//! <root>/{train,val,test}/<id>/{f_gt,g_gt,f_opmt,g_opmt,p1,p2}.tsr
//! ```

pub mod tensor;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{self, add_poisson_noise, forward_project};
use crate::geometry::{GeometrySpec, ImageGrid, ProjectionMatrix};
use crate::opmt::{self, OpmtConfig};
use crate::phantom::{self, DensityRange, ImagePair};
use crate::spectra::{self, MaterialTable, SpectralChannel, SpectrumTable};

pub use tensor::{read_tensor, write_atomic, write_tensor};

pub const MANIFEST_VERSION: u32 = 1;

/// File names inside one sample directory.
pub const SAMPLE_FILES: [&str; 6] = ["f_gt", "g_gt", "f_opmt", "g_opmt", "p1", "p2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Train:val:test ratio, e.g. `3000:400:100` or `8:1:1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec(pub [u64; 3]);

impl SplitSpec {
    /// Split sizes for `count` samples. Floors are topped up by largest
    /// remainder, earlier splits first on ties.
    pub fn sizes(&self, count: usize) -> [usize; 3] {
        let total: u64 = self.0.iter().sum();
        let count = count as u64;
        let mut sizes = [0u64; 3];
        let mut rems = [(0u64, 0usize); 3];
        for i in 0..3 {
            sizes[i] = count * self.0[i] / total;
            rems[i] = (count * self.0[i] % total, i);
        }
        let mut left = count - sizes.iter().sum::<u64>();
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in rems.iter() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        sizes.map(|s| s as usize)
    }
}

impl FromStr for SplitSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!("split {s:?} must look like a:b:c")));
        }
        let mut r = [0u64; 3];
        for (slot, p) in r.iter_mut().zip(&parts) {
            *slot = p
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("split {s:?}: {p:?} is not a count")))?;
        }
        if r.iter().sum::<u64>() == 0 {
            return Err(Error::invalid("split ratios sum to zero"));
        }
        Ok(SplitSpec(r))
    }
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.0[0], self.0[1], self.0[2])
    }
}

impl Serialize for SplitSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SplitSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Assigns splits to sample indices `0..count` by a seeded shuffle.
pub fn assign_splits(count: usize, split: SplitSpec, seed: u64) -> Vec<Split> {
    let sizes = split.sizes(count);
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    order.shuffle(&mut rng);
    let mut out = vec![Split::Train; count];
    for (pos, &idx) in order.iter().enumerate() {
        out[idx] = if pos < sizes[0] {
            Split::Train
        } else if pos < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

/// Mixes a master seed with a sample index and a purpose tag.
pub fn derive_seed(master: u64, index: u64, tag: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePaths {
    pub f_gt: String,
    pub g_gt: String,
    pub f_opmt: String,
    pub g_opmt: String,
    pub p1: String,
    pub p2: String,
}

impl SamplePaths {
    fn for_sample(split: Split, id: &str) -> Self {
        let p = |name: &str| format!("{}/{id}/{name}.tsr", split.dir_name());
        SamplePaths {
            f_gt: p("f_gt"),
            g_gt: p("g_gt"),
            f_opmt: p("f_opmt"),
            g_opmt: p("g_opmt"),
            p1: p("p1"),
            p2: p("p2"),
        }
    }

    fn image_paths(&self) -> [&str; 4] {
        [&self.f_gt, &self.g_gt, &self.f_opmt, &self.g_opmt]
    }

    fn sinogram_paths(&self) -> [&str; 2] {
        [&self.p1, &self.p2]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    pub paths: SamplePaths,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    /// Maximum bone density over the training split.
    pub f: f64,
    /// Maximum water density over the training split.
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub geometry_hash: String,
    pub geometry: GeometrySpec,
    pub spectra_hashes: Vec<String>,
    pub i0: f64,
    pub opmt: OpmtConfig,
    pub master_seed: u64,
    pub split: SplitSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub image_shape: [usize; 2],
    pub sinogram_shape: [usize; 2],
    pub samples: Vec<SampleEntry>,
    pub normalization: Normalization,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Checks split partitioning and that every referenced file exists,
    /// decodes, and has the declared shape.
    pub fn verify(&self, root: &Path) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for s in &self.samples {
            if !ids.insert(&s.id) {
                return Err(Error::invalid(format!("sample id {} appears twice", s.id)));
            }
            if !s.complete {
                return Err(Error::invalid(format!("sample {} is incomplete", s.id)));
            }
            let prefix = format!("{}/{}/", s.split.dir_name(), s.id);
            let checks = s
                .paths
                .image_paths()
                .into_iter()
                .map(|p| (p, self.image_shape))
                .chain(s.paths.sinogram_paths().into_iter().map(|p| (p, self.sinogram_shape)));
            for (rel, shape) in checks {
                if !rel.starts_with(&prefix) {
                    return Err(Error::invalid(format!("{rel} is outside {prefix}")));
                }
                let (found, values) = tensor::read_tensor(&root.join(rel))?;
                if found != shape {
                    return Err(Error::Shape(format!("{rel}: {found:?}, expected {shape:?}")));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(rel.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Where spectra and materials come from; `None` selects the bundled tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraSource {
    pub low: Option<PathBuf>,
    pub high: Option<PathBuf>,
    pub materials: Option<PathBuf>,
}

/// Loaded spectra with the content hashes recorded in provenance.
pub struct LoadedSpectra {
    pub low: SpectrumTable,
    pub high: SpectrumTable,
    pub materials: MaterialTable,
    pub hashes: Vec<String>,
}

impl LoadedSpectra {
    pub fn channels(&self) -> Result<(SpectralChannel, SpectralChannel)> {
        Ok((
            SpectralChannel::prepare(&self.low, &self.materials)?,
            SpectralChannel::prepare(&self.high, &self.materials)?,
        ))
    }
}

impl SpectraSource {
    pub fn load(&self) -> Result<LoadedSpectra> {
        let read = |p: &Option<PathBuf>, bundled: &str| -> Result<Vec<u8>> {
            match p {
                Some(path) => std::fs::read(path).map_err(|e| Error::io(path, e)),
                None => Ok(bundled.as_bytes().to_vec()),
            }
        };
        let name = |p: &Option<PathBuf>, dflt: &str| {
            p.as_ref().map_or(dflt.to_string(), |p| p.display().to_string())
        };
        let label = |p: &Option<PathBuf>, dflt: &str| {
            p.as_ref()
                .and_then(|p| p.file_stem())
                .map_or(dflt.to_string(), |s| s.to_string_lossy().into_owned())
        };
        let low_bytes = read(&self.low, spectra::bundled::SPECTRUM_80KV)?;
        let high_bytes = read(&self.high, spectra::bundled::SPECTRUM_140KV)?;
        let mat_bytes = read(&self.materials, spectra::bundled::BONE_WATER)?;
        Ok(LoadedSpectra {
            low: spectra::parse_spectrum(
                low_bytes.as_slice(),
                &name(&self.low, "spectrum_80kv_approx.csv"),
                &label(&self.low, "low-80kV"),
            )?,
            high: spectra::parse_spectrum(
                high_bytes.as_slice(),
                &name(&self.high, "spectrum_140kv_approx.csv"),
                &label(&self.high, "high-140kV"),
            )?,
            materials: spectra::parse_materials(
                mat_bytes.as_slice(),
                &name(&self.materials, "bone_water_approx.csv"),
            )?,
            hashes: vec![sha256_hex(&low_bytes), sha256_hex(&high_bytes), sha256_hex(&mat_bytes)],
        })
    }
}

/// Externally supplied ground-truth pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestPair {
    pub f: PathBuf,
    pub g: PathBuf,
}

/// Everything needed to build a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Number of generated phantoms; ignored when `ingest` is non-empty.
    pub count: usize,
    pub geometry: GeometrySpec,
    pub spectra: SpectraSource,
    pub i0: f64,
    pub opmt: OpmtConfig,
    pub split: SplitSpec,
    pub seed: u64,
    pub ingest: Vec<IngestPair>,
    pub density_range: Option<DensityRange>,
    /// Directory for the cached system matrix.
    pub matrix_cache: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 3500,
            geometry: GeometrySpec::default(),
            spectra: SpectraSource::default(),
            i0: forward::DEFAULT_I0,
            opmt: OpmtConfig::default(),
            split: SplitSpec([3000, 400, 100]),
            seed: 0,
            ingest: Vec::new(),
            density_range: None,
            matrix_cache: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.geometry.build()?;
        self.opmt.validate()?;
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::invalid(format!("i0 must be > 0, got {}", self.i0)));
        }
        if self.sample_count() == 0 {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        if self.ingest.is_empty() {
            self.count
        } else {
            self.ingest.len()
        }
    }
}

const NOISE_TAG: u64 = 1;

struct SampleOutput {
    f_max: f64,
    g_max: f64,
}

fn build_sample(
    root: &Path,
    spec: &DatasetSpec,
    grid: &ImageGrid,
    fov: f64,
    matrix: &ProjectionMatrix,
    low: &SpectralChannel,
    high: &SpectralChannel,
    index: usize,
    entry: &SampleEntry,
) -> Result<SampleOutput> {
    let truth: ImagePair = match spec.ingest.get(index) {
        Some(pair) => phantom::ingest_image_pair(&pair.f, &pair.g, grid, spec.density_range)?,
        None => phantom::generate_phantom_indexed(grid, fov, spec.seed, index as u64),
    };
    let clean = forward_project(&truth, matrix, low, high)?;
    let noisy = add_poisson_noise(&clean, spec.i0, derive_seed(spec.seed, index as u64, NOISE_TAG))?;
    let recon = opmt::run(&noisy, matrix, low, high, &spec.opmt)?;

    let dir = root.join(entry.split.dir_name()).join(&entry.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let img = [grid.n_r, grid.n_r];
    let sino = [noisy.n_s, noisy.n_d];
    let p = &entry.paths;
    tensor::write_f64_as_f32(&root.join(&p.f_gt), &img, &truth.f)?;
    tensor::write_f64_as_f32(&root.join(&p.g_gt), &img, &truth.g)?;
    tensor::write_f64_as_f32(&root.join(&p.f_opmt), &img, &recon.state.f)?;
    tensor::write_f64_as_f32(&root.join(&p.g_opmt), &img, &recon.state.g)?;
    tensor::write_f64_as_f32(&root.join(&p.p1), &sino, &noisy.p1)?;
    tensor::write_f64_as_f32(&root.join(&p.p2), &sino, &noisy.p2)?;
    let max = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).fold(0.0, f64::max);
    Ok(SampleOutput {
        f_max: max(&truth.f),
        g_max: max(&truth.g),
    })
}

/// Generates (or ingests) ground truth, simulates noisy dual-spectrum data,
/// reconstructs with OPMT, and writes the dataset tree plus `manifest.json`
/// under `root`. Failed samples are marked incomplete in the manifest and
/// the first failure is returned after the manifest is written.
pub fn build_dataset(spec: &DatasetSpec, root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let (geom, grid) = spec.geometry.build()?;
    let matrix = match &spec.matrix_cache {
        Some(dir) => ProjectionMatrix::load_or_build(&geom, &grid, dir)?,
        None => ProjectionMatrix::build(&geom, &grid)?,
    };
    let loaded = spec.spectra.load()?;
    let (low, high) = loaded.channels()?;
    let fov = geom.fov_radius();
    let count = spec.sample_count();
    let width = count.saturating_sub(1).to_string().len().max(4);
    let splits = assign_splits(count, spec.split, spec.seed);

    let mut samples: Vec<SampleEntry> = (0..count)
        .map(|i| {
            let id = format!("{i:0width$}");
            SampleEntry {
                paths: SamplePaths::for_sample(splits[i], &id),
                id,
                split: splits[i],
                seed: derive_seed(spec.seed, i as u64, NOISE_TAG),
                complete: false,
                error: None,
            }
        })
        .collect();
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let results: Vec<Result<SampleOutput>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, entry)| build_sample(root, spec, &grid, fov, &matrix, &low, &high, i, entry))
        .collect();

    let mut norm = Normalization { f: 0.0, g: 0.0 };
    let mut first_error = None;
    for (entry, result) in samples.iter_mut().zip(results) {
        match result {
            Ok(out) => {
                entry.complete = true;
                if entry.split == Split::Train {
                    norm.f = norm.f.max(out.f_max);
                    norm.g = norm.g.max(out.g_max);
                }
            }
            Err(e) => {
                entry.error = Some(e.to_string());
                first_error.get_or_insert(e);
            }
        }
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        image_shape: [grid.n_r, grid.n_r],
        sinogram_shape: [geom.n_s, geom.n_d],
        samples,
        normalization: norm,
        provenance: Provenance {
            geometry_hash: matrix.key().to_string(),
            geometry: spec.geometry.clone(),
            spectra_hashes: loaded.hashes.clone(),
            i0: spec.i0,
            opmt: spec.opmt.clone(),
            master_seed: spec.seed,
            split: spec.split,
        },
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    tensor::write_atomic(&root.join("manifest.json"), &json)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_match_protocols() {
        assert_eq!(SplitSpec([3000, 400, 100]).sizes(3500), [3000, 400, 100]);
        assert_eq!("8:1:1".parse::<SplitSpec>().unwrap().sizes(1000), [800, 100, 100]);
        assert_eq!(SplitSpec([1, 1, 1]).sizes(3), [1, 1, 1]);
        assert_eq!(SplitSpec([8, 1, 1]).sizes(7).iter().sum::<usize>(), 7);
        assert_eq!(SplitSpec([200, 25, 25]).sizes(250), [200, 25, 25]);
    }

    #[test]
    fn split_parse_errors() {
        assert!("8:1".parse::<SplitSpec>().is_err());
        assert!("a:b:c".parse::<SplitSpec>().is_err());
        assert!("0:0:0".parse::<SplitSpec>().is_err());
        assert_eq!("3000:400:100".parse::<SplitSpec>().unwrap().to_string(), "3000:400:100");
    }

    #[test]
    fn assignment_partitions_and_is_seeded() {
        let a = assign_splits(1000, SplitSpec([8, 1, 1]), 42);
        let count = |s| a.iter().filter(|&&x| x == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (800, 100, 100));
        assert_eq!(a, assign_splits(1000, SplitSpec([8, 1, 1]), 42));
        assert_ne!(a, assign_splits(1000, SplitSpec([8, 1, 1]), 43));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i, 1)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(7, 0, 1), derive_seed(7, 0, 2));
    }

    #[test]
    fn spec_rejects_unknown_keys() {
        assert!(serde_json::from_str::<DatasetSpec>(r#"{"count": 3, "bogus": 1}"#).is_err());
        let s: DatasetSpec = serde_json::from_str(r#"{"count": 3, "split": "1:1:1"}"#).unwrap();
        assert_eq!(s.split, SplitSpec([1, 1, 1]));
        assert_eq!(s.opmt.n_sweeps, 10);
    }
}
