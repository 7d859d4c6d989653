use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::{DatasetSpec, PartitionScheme, SplitSizes};
use crate::capsnet::{Dataset, Sample};
use crate::ctnorm::{normalize_volume, read_ctv1};
use crate::error::{Error, Result};
use crate::rng;

/// Training pool plus the two held-out sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    /// Held by the coordinator and used to score candidate models.
    pub validation: Dataset,
    /// Used only for reporting.
    pub test: Dataset,
    pub input_len: usize,
}

/// `n` samples alternating between the two blobs.
pub fn gaussian_blobs(n: usize, dim: usize, separation: f64, rng: &mut impl Rng) -> Dataset {
    (0..n)
        .map(|k| {
            let label = k % 2;
            let centre = if label == 1 { separation } else { -separation };
            let features = (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    centre + z
                })
                .collect();
            Sample { features, label }
        })
        .collect()
}

/// `size × size` images of background noise; class 1 adds a bright disc
/// of random centre and radius.
pub fn lesion_images(n: usize, size: usize, rng: &mut impl Rng) -> Dataset {
    let noise = Normal::new(0.0, 0.15).expect("valid std");
    let s = size as f64;
    (0..n)
        .map(|k| {
            let label = k % 2;
            let mut px: Vec<f64> = (0..size * size).map(|_| noise.sample(rng) - 0.25).collect();
            if label == 1 {
                let r = rng.random_range(s / 8.0..s / 4.0);
                let cx = rng.random_range(r..s - r);
                let cy = rng.random_range(r..s - r);
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        if dx * dx + dy * dy <= r * r {
                            px[y * size + x] += 0.6;
                        }
                    }
                }
            }
            Sample { features: px, label }
        })
        .collect()
}

fn split_generated(all: Dataset, sizes: &SplitSizes, input_len: usize) -> DataSplits {
    let mut samples = all.samples;
    let test = samples.split_off(sizes.n_train + sizes.n_validation);
    let validation = samples.split_off(sizes.n_train);
    DataSplits { train: Dataset::new(samples), validation: Dataset::new(validation), test: Dataset::new(test), input_len }
}

/// Builds or loads the dataset described by `spec`. Synthetic data is
/// drawn from the `dataset` stream of `seed`.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<DataSplits> {
    let mut r = rng::stream(seed, "dataset");
    match spec {
        DatasetSpec::Blobs { dim, separation, split } => {
            let n = split.n_train + split.n_validation + split.n_test;
            Ok(split_generated(gaussian_blobs(n, *dim, *separation, &mut r), split, *dim))
        }
        DatasetSpec::Images { size, split } => {
            let n = split.n_train + split.n_validation + split.n_test;
            Ok(split_generated(lesion_images(n, *size, &mut r), split, size * size))
        }
        DatasetSpec::Ctv1 { manifest, window, extent_mm, spacing_mm, validation_fraction, test_fraction } => {
            let mut all = load_ctv1_manifest(manifest, |v| {
                Ok(normalize_volume(&v, *window, *extent_mm, *spacing_mm)?.voxels.iter().map(|&x| x as f64).collect())
            })?;
            all.samples.shuffle(&mut r);
            let n = all.len();
            let n_test = ((n as f64 * test_fraction).round() as usize).max(1);
            let n_val = ((n as f64 * validation_fraction).round() as usize).max(1);
            if n_test + n_val >= n {
                return Err(Error::invalid(format!("{n} volumes are too few to hold out validation and test sets")));
            }
            let input_len = all.samples[0].features.len();
            let sizes = SplitSizes { n_train: n - n_test - n_val, n_validation: n_val, n_test };
            Ok(split_generated(all, &sizes, input_len))
        }
    }
}

/// Reads a `path,label` manifest (optional header, `#` comments) and
/// turns each volume into a feature vector with `featurize`.
pub fn load_ctv1_manifest(
    manifest: &Path,
    mut featurize: impl FnMut(crate::ctnorm::CtVolume) -> Result<Vec<f64>>,
) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("path")) {
            continue;
        }
        let bad = || Error::Format { what: "ctv1 manifest", detail: format!("line {}: {line:?}", lineno + 1) };
        let (path, label) = line.rsplit_once(',').ok_or_else(bad)?;
        let label: usize = label.trim().parse().map_err(|_| bad())?;
        if label > 1 {
            return Err(bad());
        }
        let path = base.join(path.trim());
        let volume = read_ctv1(&path)?.into_volume()?;
        samples.push(Sample { features: featurize(volume)?, label });
    }
    if samples.len() < 3 {
        return Err(Error::invalid(format!("{} lists fewer than 3 volumes", manifest.display())));
    }
    Ok(Dataset::new(samples))
}

/// Splits `data` into `n_hospitals` disjoint, covering partitions after a
/// seeded shuffle. With `IidEqual` the first `len % n` hospitals get one
/// extra sample.
pub fn partition_dataset(data: &Dataset, n_hospitals: usize, scheme: &PartitionScheme, seed: u64) -> Result<Vec<Dataset>> {
    if n_hospitals == 0 {
        return Err(Error::invalid("need at least one hospital"));
    }
    let n = data.len();
    if n < n_hospitals {
        return Err(Error::invalid(format!("{n} samples cannot cover {n_hospitals} hospitals")));
    }
    let sizes = match scheme {
        PartitionScheme::IidEqual => (0..n_hospitals).map(|h| n / n_hospitals + usize::from(h < n % n_hospitals)).collect(),
        PartitionScheme::SizeSkewed(ratios) => skewed_sizes(n, ratios, n_hospitals)?,
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "partition"));
    let mut parts = Vec::with_capacity(n_hospitals);
    let mut rest = order.as_slice();
    for size in sizes {
        let (head, tail) = rest.split_at(size);
        parts.push(head.iter().map(|&k| data.samples[k].clone()).collect());
        rest = tail;
    }
    Ok(parts)
}

// Largest-remainder apportionment.
fn skewed_sizes(n: usize, ratios: &[f64], n_hospitals: usize) -> Result<Vec<usize>> {
    if ratios.len() != n_hospitals || ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid("size-skewed ratios need one positive entry per hospital"));
    }
    let total: f64 = ratios.iter().sum();
    let quotas: Vec<f64> = ratios.iter().map(|r| r / total * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut short = n - sizes.iter().sum::<usize>().min(n);
    let mut by_fraction: Vec<usize> = (0..n_hospitals).collect();
    by_fraction.sort_by(|&a, &b| (quotas[b] - sizes[b] as f64).total_cmp(&(quotas[a] - sizes[a] as f64)).then(a.cmp(&b)));
    for &h in by_fraction.iter().cycle() {
        if short == 0 {
            break;
        }
        sizes[h] += 1;
        short -= 1;
    }
    if let Some(h) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("hospital {h} would receive no samples")));
    }
    Ok(sizes)
}
