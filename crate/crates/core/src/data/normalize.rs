use serde::{Deserialize, Serialize};

use super::{DataError, Result, Sample};
use crate::tensor::Tensor;

pub const CHANNEL_NAMES: [&str; 4] = ["red", "green", "blue", "depth"];

/// Per-channel mean and population standard deviation over the pixels of
/// the samples in `source_ids` (RGB channels then depth).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: [f64; 4],
    pub std: [f64; 4],
    pub source_ids: Vec<String>,
}

fn channel(s: &Sample, c: usize) -> &[f64] {
    if c < 3 {
        let plane = s.height() * s.width();
        &s.rgb.data()[c * plane..(c + 1) * plane]
    } else {
        s.depth.data()
    }
}

/// Statistics over the given (training) samples only.
pub fn compute_stats(samples: &[&Sample]) -> Result<NormalizationStats> {
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    let mut mean = [0.0; 4];
    let mut std = [0.0; 4];
    for c in 0..4 {
        let count: usize = samples.iter().map(|s| channel(s, c).len()).sum();
        let m = samples.iter().flat_map(|s| channel(s, c)).sum::<f64>() / count as f64;
        let var = samples
            .iter()
            .flat_map(|s| channel(s, c))
            .map(|v| (v - m) * (v - m))
            .sum::<f64>()
            / count as f64;
        if !(var.sqrt() > 0.0) {
            return Err(DataError::ConstantChannel {
                channel: CHANNEL_NAMES[c],
            });
        }
        mean[c] = m;
        std[c] = var.sqrt();
    }
    Ok(NormalizationStats {
        mean,
        std,
        source_ids: samples.iter().map(|s| s.id.clone()).collect(),
    })
}

/// `(x - mean) / std` per channel; traits are untouched.
pub fn normalize(sample: &Sample, stats: &NormalizationStats) -> Sample {
    let plane = sample.height() * sample.width();
    let mut rgb = sample.rgb.clone();
    for (i, v) in rgb.data_mut().iter_mut().enumerate() {
        let c = i / plane;
        *v = (*v - stats.mean[c]) / stats.std[c];
    }
    let depth: Tensor = sample.depth.map(|v| (v - stats.mean[3]) / stats.std[3]);
    Sample {
        rgb,
        depth,
        ..sample.clone()
    }
}

/// Fails if any held-out id contributed to `stats`.
pub fn check_no_leakage<'a>(
    stats: &NormalizationStats,
    held_out: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let sources: std::collections::HashSet<&str> =
        stats.source_ids.iter().map(String::as_str).collect();
    match held_out.into_iter().find(|id| sources.contains(id)) {
        Some(id) => Err(DataError::Leakage { id: id.to_string() }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TraitVector;
    use rand::SeedableRng;

    fn sample(id: &str, seed: u64) -> Sample {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Sample::new(
            id,
            Tensor::uniform([3, 6, 5], 0.0, 255.0, &mut r),
            Tensor::uniform([1, 6, 5], 100.0, 900.0, &mut r),
            TraitVector {
                fresh_weight: 1.0,
                dry_weight: 0.1,
                height: 1.0,
                diameter: 1.0,
                leaf_area: 1.0,
            },
            "v",
        )
        .unwrap()
    }

    #[test]
    fn normalized_training_channels_are_standard() {
        let set: Vec<Sample> = (0..4).map(|i| sample(&format!("s{i}"), i)).collect();
        let refs: Vec<&Sample> = set.iter().collect();
        let stats = compute_stats(&refs).unwrap();
        let normed: Vec<Sample> = set.iter().map(|s| normalize(s, &stats)).collect();
        for c in 0..4 {
            let vals: Vec<f64> = normed
                .iter()
                .flat_map(|s| {
                    if c < 3 {
                        s.rgb.data()[c * 30..(c + 1) * 30].to_vec()
                    } else {
                        s.depth.data().to_vec()
                    }
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-9, "channel {c} mean {m}");
            assert!((v.sqrt() - 1.0).abs() < 1e-9, "channel {c} std {}", v.sqrt());
        }
    }

    #[test]
    fn constant_channel_is_an_error() {
        let mut s = sample("a", 1);
        s.depth = Tensor::full([1, 6, 5], 7.0);
        assert!(matches!(
            compute_stats(&[&s]),
            Err(DataError::ConstantChannel { channel: "depth" })
        ));
    }

    #[test]
    fn leakage_is_detected() {
        let (a, b) = (sample("a", 1), sample("b", 2));
        let stats = compute_stats(&[&a, &b]).unwrap();
        assert!(check_no_leakage(&stats, ["c", "d"]).is_ok());
        assert!(matches!(
            check_no_leakage(&stats, ["c", "b"]),
            Err(DataError::Leakage { id }) if id == "b"
        ));
    }
}
