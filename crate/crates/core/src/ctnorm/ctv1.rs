//! The `CTV1` volume container.
//!
//! Little-endian layout: magic `b"CTV1"`, three `u32` dims, three `f64`
//! spacings in millimetres, then `nx·ny·nz` `f32` voxels, x fastest.

use std::fs;
use std::path::Path;

use super::volume::{CtVolume, NormalizedVolume};
use crate::error::{Error, Result};

pub const CTV1_MAGIC: &[u8; 4] = b"CTV1";
const HEADER_LEN: usize = 4 + 3 * 4 + 3 * 8;

/// Raw decoded contents of a CTV1 file, before any HU clamping.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctv1 {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub voxels: Vec<f32>,
}

impl Ctv1 {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.voxels.len());
        out.extend_from_slice(CTV1_MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing_mm {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for v in &self.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "CTV1 volume", detail };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != CTV1_MAGIC {
            return Err(bad("missing CTV1 magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let dims = [u32_at(4), u32_at(8), u32_at(12)];
        let spacing_mm = [f64_at(16), f64_at(24), f64_at(32)];
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n * 4 {
            return Err(bad(format!("dims {dims:?} need {} voxel bytes, found {}", n * 4, body.len())));
        }
        let voxels = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Ctv1 { dims, spacing_mm, voxels })
    }

    pub fn into_volume(self) -> Result<CtVolume> {
        CtVolume::new(self.dims, self.spacing_mm, self.voxels)
    }
}

impl From<&CtVolume> for Ctv1 {
    fn from(v: &CtVolume) -> Self {
        Ctv1 { dims: v.dims(), spacing_mm: v.spacing_mm(), voxels: v.voxels().to_vec() }
    }
}

impl From<&NormalizedVolume> for Ctv1 {
    fn from(v: &NormalizedVolume) -> Self {
        Ctv1 { dims: v.dims, spacing_mm: v.spacing_mm, voxels: v.voxels.clone() }
    }
}

pub fn read_ctv1(path: impl AsRef<Path>) -> Result<Ctv1> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ctv1::decode(&bytes)
}

pub fn write_ctv1(path: impl AsRef<Path>, volume: &Ctv1) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, volume.encode()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let v = Ctv1 { dims: [2, 1, 1], spacing_mm: [0.5, 1.0, 2.5], voxels: vec![-1000.0, 40.0] };
        let bytes = v.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..4], b"CTV1");
        assert_eq!(&bytes[4..8], &[2, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &0.5f64.to_le_bytes());
        assert_eq!(&bytes[40..44], &(-1000.0f32).to_le_bytes());
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let v = Ctv1 { dims: [2, 2, 1], spacing_mm: [1.0; 3], voxels: vec![0.0; 4] };
        let bytes = v.encode();
        assert!(Ctv1::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Ctv1::decode(&wrong).is_err());
        assert!(Ctv1::decode(b"CTV").is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            dims in (1usize..4, 1usize..4, 1usize..4),
            spacing in (0.1f64..5.0, 0.1f64..5.0, 0.1f64..5.0),
            seed in any::<u32>(),
        ) {
            let n = dims.0 * dims.1 * dims.2;
            let voxels = (0..n).map(|i| ((seed as usize + i * 7919) % 4096) as f32 - 1024.0).collect();
            let v = Ctv1 { dims: [dims.0, dims.1, dims.2], spacing_mm: [spacing.0, spacing.1, spacing.2], voxels };
            prop_assert_eq!(Ctv1::decode(&v.encode()).unwrap(), v);
        }
    }
}
