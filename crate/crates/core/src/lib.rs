//! Snapshot spectral imaging: simulate a metasurface filter-array sensor and
//! reconstruct the spectral cube, either with unfolded ADMM or with the
//! per-pixel least-squares baseline.

pub mod admm;
pub mod dataset;
pub mod denoise;
pub mod error;
pub mod format;
pub mod forward;
pub mod masks;
pub mod metrics;
pub mod perpixel;
pub mod types;
pub mod unet;

pub use admm::{reconstruct, AdmmConfig, AdmmOutput, DenoiserKind};
pub use error::{Error, Result};
pub use forward::{add_noise, adjoint, forward, phi_phit_diag};
pub use perpixel::{reconstruct_perpixel, PerPixelConfig};
pub use types::{Dims, MaskStack, Measurement, NoiseSpec, SpectralCube, WavelengthGrid};
