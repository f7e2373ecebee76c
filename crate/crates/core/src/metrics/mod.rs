//! Motion evaluation: kinetic and geometric feature extractors, Frechet
//! distance between Gaussian fits, pairwise diversity, and a small spectral
//! helper. The feature constructions are desk-scale stand-ins, so only
//! metric-level properties and relative orderings are meaningful.

pub mod diversity;
pub mod features;
pub mod fid;
pub mod spectral;

pub use diversity::{diversity, DiversityPairs};
pub use features::{geometric_features, kinetic_features, FeatureKind, GEOMETRIC_DIM, KINETIC_DIM};
pub use fid::{fid, GaussianStats};
pub use spectral::{dft_power, dominant_frequency};
