use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FedConfig, ModelUpdate};
use crate::error::{Error, Result};
use crate::tensor::{l2_norm, WeightTensor};

/// Uniform sample of `min(m_t, H)` ids without replacement, returned in
/// the input order.
pub fn subsample<T: Clone>(ids: &[T], m_t: usize, rng: &mut impl Rng) -> Result<Vec<T>> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot sample from an empty hospital list"));
    }
    if m_t == 0 {
        return Err(Error::invalid("subsample size must be at least 1"));
    }
    let mut picked = index::sample(rng, ids.len(), m_t.min(ids.len())).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

/// `Δw / max(1, ‖Δw‖₂ / S)`. Updates already inside the ball come back
/// unchanged; clipped ones have norm `S` up to rounding and never above it,
/// which makes the operation idempotent.
pub fn clip_update(delta: &WeightTensor, clip_bound: f64) -> Result<WeightTensor> {
    if !(clip_bound > 0.0) {
        return Err(Error::invalid(format!("clip bound must be positive, got {clip_bound}")));
    }
    let norm = l2_norm(delta)?;
    if norm <= clip_bound {
        return Ok(delta.clone());
    }
    let mut factor = clip_bound / norm;
    loop {
        let clipped = delta.scale(factor)?;
        if l2_norm(&clipped)? <= clip_bound {
            return Ok(clipped);
        }
        factor *= 1.0 - f64::EPSILON;
    }
}

/// `len` i.i.d. draws of `N(0, std²)`. Draws are `z · std` so the realized
/// vector scales exactly with `std` for a fixed stream.
pub fn gaussian_noise(len: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

/// `w_{t+1} = w_t + (1/m_t)[Σ clip(Δw, S) + N(0, σ²S²)]` with `m_t` the
/// number of updates. With `σ = 0` no noise is drawn.
pub fn dp_federated_round(
    w_t: &WeightTensor,
    updates: &[ModelUpdate],
    cfg: &FedConfig,
    rng: &mut impl Rng,
) -> Result<WeightTensor> {
    if updates.is_empty() {
        return Err(Error::invalid("dp_federated_round needs at least one update"));
    }
    if !(cfg.clip_bound > 0.0) || !(cfg.noise_sigma >= 0.0) {
        return Err(Error::invalid("invalid clip bound or noise sigma"));
    }
    if let Some(u) = updates.iter().find(|u| !u.delta.same_shape(w_t)) {
        return Err(Error::invalid(format!(
            "update from {} has shape {:?}, model has {:?}",
            u.hospital,
            u.delta.shape(),
            w_t.shape()
        )));
    }
    let mut sum = vec![0.0; w_t.len()];
    for u in updates {
        let clipped = clip_update(&u.delta, cfg.clip_bound)?;
        for (acc, v) in sum.iter_mut().zip(clipped.data()) {
            *acc += v;
        }
    }
    if cfg.noise_sigma > 0.0 {
        let std = cfg.noise_sigma * cfg.clip_bound;
        if !std.is_finite() {
            return Err(Error::invalid("Gaussian noise needs a finite clip bound"));
        }
        for (acc, n) in sum.iter_mut().zip(gaussian_noise(w_t.len(), std, rng)) {
            *acc += n;
        }
    }
    let m_t = updates.len() as f64;
    let data = w_t.data().iter().zip(&sum).map(|(w, s)| w + s / m_t).collect();
    w_t.with_data(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::NodeId;
    use crate::rng;
    use proptest::prelude::*;

    fn t(v: &[f64]) -> WeightTensor {
        WeightTensor::from_vec(v.to_vec()).unwrap()
    }

    fn update(v: &[f64]) -> ModelUpdate {
        ModelUpdate { hospital: NodeId::from_bytes([1; 20]), delta: t(v) }
    }

    #[test]
    fn sampling_examples() {
        let ids = ["a", "b", "c"];
        let mut r = rng::seeded(1);
        assert_eq!(subsample(&ids, 3, &mut r).unwrap(), vec!["a", "b", "c"]);
        assert_eq!(subsample(&ids, 10, &mut r).unwrap().len(), 3);
        let five = [1, 2, 3, 4, 5];
        let a = subsample(&five, 1, &mut rng::seeded(42)).unwrap();
        let b = subsample(&five, 1, &mut rng::seeded(42)).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
        assert!(subsample::<u8>(&[], 1, &mut r).is_err());
        assert!(subsample(&five, 0, &mut r).is_err());
    }

    #[test]
    fn inclusion_frequency_is_hypergeometric() {
        let ids: Vec<usize> = (0..10).collect();
        let mut counts = [0usize; 10];
        let mut r = rng::seeded(2024);
        let trials = 100_000;
        for _ in 0..trials {
            for id in subsample(&ids, 4, &mut r).unwrap() {
                counts[id] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 0.4).abs() <= 0.02, "frequency {f}");
        }
    }

    #[test]
    fn clip_examples() {
        let half = t(&[0.3, 0.4]);
        assert_eq!(clip_update(&half, 1.0).unwrap(), half);
        let double = t(&[1.2, 1.6]);
        let c = clip_update(&double, 1.0).unwrap();
        assert!((c.data()[0] - 0.6).abs() < 1e-15 && (c.data()[1] - 0.8).abs() < 1e-15);
        assert!((l2_norm(&c).unwrap() - 1.0).abs() < 1e-12);
        let c = clip_update(&t(&[3.0, 4.0]), 1.0).unwrap();
        assert!((c.data()[0] - 0.6).abs() < 1e-15 && (c.data()[1] - 0.8).abs() < 1e-15);
        assert!(clip_update(&half, 0.0).is_err());
        assert_eq!(clip_update(&double, f64::INFINITY).unwrap(), double);
    }

    #[test]
    fn round_without_noise_or_clipping_is_fedavg() {
        let w = t(&[1.0, -1.0]);
        let cfg = FedConfig { clip_bound: f64::INFINITY, noise_sigma: 0.0, ..FedConfig::default() };
        let ups = [update(&[0.5, 1.0]), update(&[1.5, -3.0])];
        let out = dp_federated_round(&w, &ups, &cfg, &mut rng::seeded(0)).unwrap();
        assert_eq!(out.data(), &[1.0 + (0.5 + 1.5) / 2.0, -1.0 + (1.0 - 3.0) / 2.0]);
    }

    #[test]
    fn single_oversized_update_is_halved() {
        let w = t(&[0.0, 0.0]);
        let cfg = FedConfig { clip_bound: 2.5, noise_sigma: 0.0, ..FedConfig::default() };
        let out = dp_federated_round(&w, &[update(&[3.0, 4.0])], &cfg, &mut rng::seeded(0)).unwrap();
        assert!((out.data()[0] - 1.5).abs() < 1e-15 && (out.data()[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn round_errors() {
        let w = t(&[0.0, 0.0]);
        let cfg = FedConfig::default();
        assert!(dp_federated_round(&w, &[], &cfg, &mut rng::seeded(0)).is_err());
        assert!(dp_federated_round(&w, &[update(&[1.0])], &cfg, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn noise_scales_exactly_with_clip_bound() {
        let a = gaussian_noise(64, 0.3 * 1.5, &mut rng::seeded(9));
        let b = gaussian_noise(64, 0.3 * 3.0, &mut rng::seeded(9));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn seeded_rounds_are_reproducible() {
        let w = t(&[0.0; 8]);
        let cfg = FedConfig { noise_sigma: 1.0, ..FedConfig::default() };
        let ups = [update(&[0.1; 8]), update(&[-0.2; 8])];
        let a = dp_federated_round(&w, &ups, &cfg, &mut rng::seeded(5)).unwrap();
        let b = dp_federated_round(&w, &ups, &cfg, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_bounded(v in prop::collection::vec(-10f64..10.0, 1..16), s in 0.01f64..5.0) {
            let x = t(&v);
            let once = clip_update(&x, s).unwrap();
            prop_assert!(l2_norm(&once).unwrap() <= s);
            prop_assert_eq!(clip_update(&once, s).unwrap(), once);
        }

        #[test]
        fn noiseless_round_matches_mean(
            rows in prop::collection::vec(prop::collection::vec(-1f64..1.0, 4), 1..6),
            base in prop::collection::vec(-1f64..1.0, 4),
        ) {
            let w = t(&base);
            let ups: Vec<ModelUpdate> = rows.iter().map(|r| update(r)).collect();
            let cfg = FedConfig { clip_bound: 100.0, noise_sigma: 0.0, ..FedConfig::default() };
            let out = dp_federated_round(&w, &ups, &cfg, &mut rng::seeded(0)).unwrap();
            for k in 0..4 {
                let mean = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
                prop_assert!((out.data()[k] - (base[k] + mean)).abs() <= 1e-12);
            }
        }
    }
}
