//! Dual-spectral fan-beam CT: acquisition geometry, polychromatic projection
//! with Poisson noise, OPMT/E-ART basis-material reconstruction, image
//! metrics, and the dataset format consumed by the refinement network.
//!
//! Lengths are in centimetres, energies in keV, mass attenuation in cm²/g and
//! densities in g/cm³.

pub mod dataset;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod metrics;
pub mod opmt;
pub mod phantom;
pub mod spectra;

pub use error::{Error, Result};
pub use forward::SinogramPair;
pub use geometry::{FanBeamGeometry, ImageGrid, ProjectionMatrix};
pub use opmt::{OpmtConfig, ReconState};
pub use phantom::ImagePair;
pub use spectra::{MaterialTable, SpectralChannel, SpectrumTable};
