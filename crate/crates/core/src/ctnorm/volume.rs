use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HU_MIN: f32 = -1024.0;
pub const HU_MAX: f32 = 3071.0;

/// Air, used for samples outside the scanned field.
pub const BACKGROUND_HU: f32 = -1024.0;

/// A 3D grid of Hounsfield units, x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    voxels: Vec<f32>,
    clamped: usize,
}

fn check_grid(dims: [usize; 3], spacing_mm: [f64; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::invalid(format!("volume dims {dims:?} must be positive")));
    }
    if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::invalid(format!("spacing {spacing_mm:?} must be positive")));
    }
    let n = dims[0] * dims[1] * dims[2];
    if n != len {
        return Err(Error::invalid(format!("dims {dims:?} need {n} voxels, got {len}")));
    }
    Ok(())
}

impl CtVolume {
    /// Ingests raw scanner values. Anything outside `[HU_MIN, HU_MAX]` is
    /// clamped (NaN becomes background) and the count is logged.
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3], mut voxels: Vec<f32>) -> Result<Self> {
        check_grid(dims, spacing_mm, voxels.len())?;
        let mut clamped = 0;
        for v in voxels.iter_mut() {
            if v.is_nan() {
                *v = BACKGROUND_HU;
                clamped += 1;
            } else if *v < HU_MIN || *v > HU_MAX {
                *v = v.clamp(HU_MIN, HU_MAX);
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} voxels to the scanner HU range");
        }
        Ok(CtVolume { dims, spacing_mm, voxels, clamped })
    }

    pub fn filled(dims: [usize; 3], spacing_mm: [f64; 3], hu: f32) -> Result<Self> {
        CtVolume::new(dims, spacing_mm, vec![hu; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn extent_mm(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.spacing_mm[a])
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    /// Voxels that were out of range on ingest.
    pub fn clamped_on_ingest(&self) -> usize {
        self.clamped
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[self.index(x, y, z)]
    }

    pub(crate) fn from_trusted(dims: [usize; 3], spacing_mm: [f64; 3], voxels: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), voxels.len());
        CtVolume { dims, spacing_mm, voxels, clamped: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungWindow {
    /// Window level: the HU value mapped to 0.
    pub wl: f64,
    /// Window width in HU; must be positive.
    pub ww: f64,
}

impl LungWindow {
    pub fn new(wl: f64, ww: f64) -> Result<Self> {
        let w = LungWindow { wl, ww };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.wl.is_finite() || !(self.ww.is_finite() && self.ww > 0.0) {
            return Err(Error::invalid(format!(
                "lung window needs finite level and positive width, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Maps one HU value into `[-0.5, 0.5]`.
    pub fn apply(&self, hu: f64) -> f64 {
        ((hu - self.wl) / self.ww).clamp(-0.5, 0.5)
    }
}

impl Default for LungWindow {
    fn default() -> Self {
        LungWindow { wl: -600.0, ww: 1200.0 }
    }
}

/// Windowed intensities, every voxel in `[-0.5, 0.5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedVolume {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub voxels: Vec<f32>,
}

pub fn signal_normalize(v: &CtVolume, window: LungWindow) -> Result<NormalizedVolume> {
    window.validate()?;
    let voxels = v.voxels.iter().map(|&hu| window.apply(hu as f64) as f32).collect();
    Ok(NormalizedVolume { dims: v.dims, spacing_mm: v.spacing_mm, voxels })
}
