//! CT volume normalization.
//!
//! Volumes from different scanners differ in resolution and intensity
//! calibration. [`spatial_resample`] brings them onto a common physical grid
//! and [`signal_normalize`] maps Hounsfield units through a lung window into
//! `[-0.5, 0.5]`. [`aggregate_plane_probs`] fuses per-plane predictions.

mod ctv1;
mod planes;
mod resample;
mod volume;

pub use ctv1::{read_ctv1, write_ctv1, Ctv1, CTV1_MAGIC};
pub use planes::{aggregate_plane_probs, Aggregator, ProbMap};
pub use resample::{lanczos_interp_1d, lanczos_kernel, spatial_resample, LANCZOS_ORDER};
pub use volume::{
    signal_normalize, CtVolume, LungWindow, NormalizedVolume, BACKGROUND_HU, HU_MAX, HU_MIN,
};

/// Physical extent of the standardized lung volume, in millimetres.
pub const STANDARD_EXTENT_MM: [f64; 3] = [334.0, 334.0, 512.0];

/// Default isotropic spacing of the standardized grid (167 × 167 × 256).
pub const DEFAULT_SPACING_MM: [f64; 3] = [2.0, 2.0, 2.0];

/// Resamples onto the standardized grid and windows the result.
pub fn normalize_volume(
    v: &CtVolume,
    window: LungWindow,
    extent_mm: [f64; 3],
    spacing_mm: [f64; 3],
) -> crate::Result<NormalizedVolume> {
    let resampled = spatial_resample(v, extent_mm, spacing_mm)?;
    signal_normalize(&resampled, window)
}
