//! Filtered backprojection with a trainable Fourier-series filter.
//!
//! The crate covers the whole workflow: synthetic ellipse phantoms and
//! parallel-beam sinograms with Poisson noise ([`phantom`], [`projector`]),
//! frequency-domain row filtering and backprojection ([`spectral`],
//! [`pipeline`]), analytic and trainable filters ([`filters`]), edge-aware
//! losses ([`losses`]), hand-derived gradients with Adam and a one-cycle
//! schedule ([`optim`]), and evaluation metrics ([`metrics`]).

pub mod error;
pub mod filters;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod phantom;
pub mod pipeline;
pub mod projector;
pub mod raster;
pub mod spectral;

pub use error::{Error, Result};
pub use filters::{AnalyticFilter, FilterSpectrum, FourierSeriesFilter, FrequencyGrid};
pub use pipeline::{reconstruct, FilterSource, ReconstructionConfig};
pub use projector::{Geometry, PhotonCount};
pub use raster::{Image, Plane, Sinogram};
