use std::f64::consts::PI;

use super::volume::{CtVolume, BACKGROUND_HU};
use crate::error::{Error, Result};

/// Lobes of the Lanczos window.
pub const LANCZOS_ORDER: usize = 3;

// Positions this close to a sample are treated as lying on it.
const GRID_SNAP: f64 = 1e-9;

/// `sinc(x) · sinc(x/a)` on `|x| < a`, zero elsewhere. Exactly 1 at 0 and
/// exactly 0 at every other integer.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a || x.fract() == 0.0 {
        return 0.0;
    }
    let px = PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

/// Interpolates `samples` at fractional index `pos` with edge-replicated
/// taps. Weights are normalized, and the sum is taken relative to the
/// nearest sample so constant signals come back bit-exact.
pub fn lanczos_interp_1d(samples: &[f64], pos: f64) -> f64 {
    let n = samples.len();
    debug_assert!(n > 0);
    let last = (n - 1) as isize;
    let at = |i: isize| samples[i.clamp(0, last) as usize];

    let nearest = pos.round();
    if (pos - nearest).abs() <= GRID_SNAP {
        return at(nearest as isize);
    }
    let center = at(nearest as isize);
    let base = pos.floor() as isize;
    let a = LANCZOS_ORDER as isize;
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for j in (base - a + 1)..=(base + a) {
        let w = lanczos_kernel(pos - j as f64, LANCZOS_ORDER);
        wsum += w;
        acc += w * (at(j) - center);
    }
    center + acc / wsum
}

/// Resamples `v` onto a grid of `round(extent / spacing)` voxels per axis,
/// centred on the input volume. Samples outside the input's physical field
/// are set to [`BACKGROUND_HU`].
pub fn spatial_resample(
    v: &CtVolume,
    target_extent_mm: [f64; 3],
    target_spacing_mm: [f64; 3],
) -> Result<CtVolume> {
    let mut out_dims = [0usize; 3];
    for axis in 0..3 {
        let (e, s) = (target_extent_mm[axis], target_spacing_mm[axis]);
        if !(e.is_finite() && e > 0.0 && s.is_finite() && s > 0.0) {
            return Err(Error::invalid(format!(
                "target extent {target_extent_mm:?} and spacing {target_spacing_mm:?} must be positive"
            )));
        }
        let n = (e / s).round();
        if n < 1.0 {
            return Err(Error::invalid(format!("axis {axis}: extent {e} smaller than spacing {s}")));
        }
        out_dims[axis] = n as usize;
    }

    let mut dims = v.dims();
    let mut data: Vec<f64> = v.voxels().iter().map(|&x| x as f64).collect();
    let in_extent = v.extent_mm();
    let in_spacing = v.spacing_mm();
    for axis in 0..3 {
        let positions = sample_positions(
            dims[axis],
            in_extent[axis],
            in_spacing[axis],
            out_dims[axis],
            target_extent_mm[axis],
            target_spacing_mm[axis],
        );
        data = resample_axis(&data, dims, axis, &positions);
        dims[axis] = out_dims[axis];
    }
    let voxels = data.into_iter().map(|x| x as f32).collect();
    Ok(CtVolume::from_trusted(out_dims, target_spacing_mm, voxels))
}

/// Input index coordinate of each output sample, `None` when out of field.
fn sample_positions(
    n_in: usize,
    extent_in: f64,
    spacing_in: f64,
    n_out: usize,
    extent_out: f64,
    spacing_out: f64,
) -> Vec<Option<f64>> {
    let ratio = spacing_out / spacing_in;
    let offset = (extent_in - extent_out) / (2.0 * spacing_in);
    let hi = n_in as f64 - 0.5;
    (0..n_out)
        .map(|k| {
            let pos = (k as f64 + 0.5) * ratio - 0.5 + offset;
            (pos >= -0.5 - GRID_SNAP && pos <= hi + GRID_SNAP).then_some(pos)
        })
        .collect()
}

fn resample_axis(data: &[f64], dims: [usize; 3], axis: usize, positions: &[Option<f64>]) -> Vec<f64> {
    let mut out_dims = dims;
    out_dims[axis] = positions.len();
    let stride_in = [1, dims[0], dims[0] * dims[1]];
    let stride_out = [1, out_dims[0], out_dims[0] * out_dims[1]];
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut out = vec![0.0; out_dims.iter().product()];
    let mut line = vec![0.0; dims[axis]];
    for j in 0..dims[o2] {
        for i in 0..dims[o1] {
            let base_in = i * stride_in[o1] + j * stride_in[o2];
            let base_out = i * stride_out[o1] + j * stride_out[o2];
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[base_in + k * stride_in[axis]];
            }
            for (k, pos) in positions.iter().enumerate() {
                out[base_out + k * stride_out[axis]] = match pos {
                    Some(p) => lanczos_interp_1d(&line, *p),
                    None => BACKGROUND_HU as f64,
                };
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the normalized Lanczos-3 sum, written
    /// independently of `lanczos_interp_1d`.
    fn oracle(samples: &[f64], x: f64) -> f64 {
        let n = samples.len() as i64;
        let (mut num, mut den) = (0.0, 0.0);
        for j in (x.floor() as i64 - 2)..=(x.floor() as i64 + 3) {
            let d = x - j as f64;
            let w = if d == 0.0 {
                1.0
            } else if d.abs() >= 3.0 {
                0.0
            } else {
                let s = |t: f64| (PI * t).sin() / (PI * t);
                s(d) * s(d / 3.0)
            };
            num += w * samples[j.clamp(0, n - 1) as usize];
            den += w;
        }
        num / den
    }

    #[test]
    fn kernel_is_interpolating() {
        assert_eq!(lanczos_kernel(0.0, 3), 1.0);
        for k in [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0] {
            assert_eq!(lanczos_kernel(k, 3), 0.0);
        }
        assert!((lanczos_kernel(0.5, 3) - lanczos_kernel(-0.5, 3)).abs() < 1e-15);
    }

    #[test]
    fn ramp_upsampled_at_midpoints() {
        let ramp = [0.0, 1.0, 2.0, 3.0];
        for k in 0..=6 {
            let x = k as f64 * 0.5;
            let got = lanczos_interp_1d(&ramp, x);
            assert!((got - oracle(&ramp, x)).abs() < 1e-12, "x={x}");
            assert!((got - x).abs() <= 0.15, "x={x} got={got}");
        }
        assert_eq!(lanczos_interp_1d(&ramp, 0.0), 0.0);
        assert_eq!(lanczos_interp_1d(&ramp, 3.0), 3.0);
    }

    #[test]
    fn constant_volume_stays_constant() {
        let v = CtVolume::filled([5, 4, 3], [0.7, 1.3, 2.5], -500.0).unwrap();
        let out = spatial_resample(&v, [3.0, 4.0, 6.0], [0.4, 0.9, 1.1]).unwrap();
        assert_eq!(out.dims(), [8, 4, 5]);
        assert!(out.voxels().iter().all(|&x| x == -500.0));
    }

    #[test]
    fn identity_resample_is_exact() {
        let voxels: Vec<f32> = (0..60).map(|i| ((i * 37) % 101) as f32 * 11.0 - 700.0).collect();
        let v = CtVolume::new([5, 4, 3], [0.7, 1.3, 2.5], voxels).unwrap();
        let out = spatial_resample(&v, v.extent_mm(), v.spacing_mm()).unwrap();
        assert_eq!(out.dims(), v.dims());
        assert_eq!(out.voxels(), v.voxels());
    }

    #[test]
    fn out_of_field_is_background() {
        let v = CtVolume::filled([4, 4, 4], [1.0; 3], 100.0).unwrap();
        let out = spatial_resample(&v, [8.0, 4.0, 4.0], [1.0; 3]).unwrap();
        assert_eq!(out.dims(), [8, 4, 4]);
        for x in 0..8 {
            let expected = if (2..6).contains(&x) { 100.0 } else { BACKGROUND_HU };
            assert_eq!(out.get(x, 1, 1), expected, "x={x}");
        }
    }

    #[test]
    fn standard_grid_dims() {
        let v = CtVolume::filled([2, 2, 2], [200.0, 200.0, 300.0], -800.0).unwrap();
        let out = spatial_resample(&v, super::super::STANDARD_EXTENT_MM, super::super::DEFAULT_SPACING_MM)
            .unwrap();
        assert_eq!(out.dims(), [167, 167, 256]);
    }

    #[test]
    fn non_positive_target_rejected() {
        let v = CtVolume::filled([2, 2, 2], [1.0; 3], 0.0).unwrap();
        assert!(spatial_resample(&v, [0.0, 1.0, 1.0], [1.0; 3]).is_err());
        assert!(spatial_resample(&v, [1.0; 3], [1.0, -1.0, 1.0]).is_err());
    }
}
