//! Parallel-beam CT test problems: geometry, Siddon system matrix, phantoms,
//! angle-partitioned sinograms and the two noise models.

mod geometry;
pub mod io;
mod noise;
mod phantom;
mod sinogram;

pub use geometry::{build_system_matrix, default_detector_count, parse_angle_range, Geometry};
pub use noise::{
    add_gaussian_relative, add_poisson_transmission, add_white_gaussian, calibrate_i0,
    relative_noise_level, NoiseRealization,
};
pub use phantom::{make_phantom, Phantom, PhantomKind};
pub use sinogram::{AnglePartition, Sinogram};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CtError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("unknown phantom kind `{0}` (expected shepp-logan, grains or disk)")]
    UnknownPhantom(String),
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),
    #[error("clean sinogram has zero norm")]
    ZeroSinogram,
    #[error("I0 calibration for rho = {target} failed: {reason}")]
    Calibration { target: f64, reason: String },
    #[error("sinogram layout: {0}")]
    Layout(String),
    #[error("image format: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
