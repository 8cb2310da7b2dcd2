use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// How training samples are drawn each epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplerStrategy {
    /// A fresh permutation of the training set.
    #[default]
    Random,
    /// Fresh weight is cut into `bins` equal-width bins; each sample is drawn
    /// with probability proportional to `1 / |bin|`, so every bin is equally
    /// likely.
    FreshweightBins { bins: usize },
    /// A cultivar uniformly, then a sample uniformly within it.
    VarietyStratified,
}

impl SamplerStrategy {
    pub const DEFAULT_BINS: usize = 10;
}

impl fmt::Display for SamplerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerStrategy::Random => f.write_str("random"),
            SamplerStrategy::FreshweightBins { bins } => write!(f, "freshweight-bins:{bins}"),
            SamplerStrategy::VarietyStratified => f.write_str("variety-stratified"),
        }
    }
}

impl FromStr for SamplerStrategy {
    type Err = String;

    /// `random`, `variety-stratified`, `freshweight-bins` or
    /// `freshweight-bins:<B>`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "random" => Ok(Self::Random),
            None if s == "variety-stratified" => Ok(Self::VarietyStratified),
            None if s == "freshweight-bins" => Ok(Self::FreshweightBins {
                bins: Self::DEFAULT_BINS,
            }),
            Some(("freshweight-bins", b)) => match b.parse::<usize>() {
                Ok(bins) if bins > 0 => Ok(Self::FreshweightBins { bins }),
                _ => Err(format!("invalid bin count {b:?}")),
            },
            _ => Err(format!(
                "unknown sampler {s:?}; expected random, freshweight-bins[:B] or variety-stratified"
            )),
        }
    }
}

/// Draws indices into a training set according to a [`SamplerStrategy`].
#[derive(Clone, Debug)]
pub struct Sampler {
    strategy: SamplerStrategy,
    len: usize,
    probabilities: Vec<f64>,
    weighted: Option<WeightedIndex<f64>>,
    groups: Vec<Vec<usize>>,
}

impl Sampler {
    /// `fresh_weights[i]` and `varieties[i]` describe training sample `i`.
    pub fn new(strategy: SamplerStrategy, fresh_weights: &[f64], varieties: &[String]) -> Result<Self> {
        let len = fresh_weights.len();
        if len == 0 {
            return Err(DataError::Empty);
        }
        if varieties.len() != len {
            return Err(DataError::Sampler(format!(
                "{} fresh weights but {} varieties",
                len,
                varieties.len()
            )));
        }
        let mut sampler = Self {
            strategy,
            len,
            probabilities: vec![1.0 / len as f64; len],
            weighted: None,
            groups: Vec::new(),
        };
        match strategy {
            SamplerStrategy::Random => {}
            SamplerStrategy::FreshweightBins { bins } => {
                if bins == 0 {
                    return Err(DataError::Sampler("bin count must be positive".into()));
                }
                let assignment = bin_assignment(fresh_weights, bins);
                let mut counts = vec![0usize; bins];
                assignment.iter().for_each(|&b| counts[b] += 1);
                let weights: Vec<f64> = assignment.iter().map(|&b| 1.0 / counts[b] as f64).collect();
                let total: f64 = weights.iter().sum();
                sampler.probabilities = weights.iter().map(|w| w / total).collect();
                sampler.weighted = Some(
                    WeightedIndex::new(&weights).map_err(|e| DataError::Sampler(e.to_string()))?,
                );
            }
            SamplerStrategy::VarietyStratified => {
                let mut by_variety: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for (i, v) in varieties.iter().enumerate() {
                    by_variety.entry(v.as_str()).or_default().push(i);
                }
                let k = by_variety.len() as f64;
                for members in by_variety.values() {
                    for &i in members {
                        sampler.probabilities[i] = 1.0 / (k * members.len() as f64);
                    }
                }
                sampler.groups = by_variety.into_values().collect();
            }
        }
        Ok(sampler)
    }

    pub fn strategy(&self) -> SamplerStrategy {
        self.strategy
    }

    /// Probability that one draw returns each index.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.strategy {
            SamplerStrategy::Random => rng.random_range(0..self.len),
            SamplerStrategy::FreshweightBins { .. } => {
                self.weighted.as_ref().expect("weights built").sample(rng)
            }
            SamplerStrategy::VarietyStratified => {
                let group = &self.groups[rng.random_range(0..self.groups.len())];
                group[rng.random_range(0..group.len())]
            }
        }
    }

    /// One epoch's worth of indices: a permutation for `Random`, otherwise
    /// `len` independent draws with replacement.
    pub fn epoch<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        match self.strategy {
            SamplerStrategy::Random => {
                let mut order: Vec<usize> = (0..self.len).collect();
                order.shuffle(rng);
                order
            }
            _ => (0..self.len).map(|_| self.draw(rng)).collect(),
        }
    }
}

/// Equal-width bins over `[min, max]`; the maximum falls in the last bin.
pub(crate) fn bin_assignment(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    values
        .iter()
        .map(|&v| {
            if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parses_strategies() {
        assert_eq!("random".parse(), Ok(SamplerStrategy::Random));
        assert_eq!(
            "freshweight-bins".parse(),
            Ok(SamplerStrategy::FreshweightBins { bins: 10 })
        );
        assert_eq!(
            "freshweight-bins:4".parse(),
            Ok(SamplerStrategy::FreshweightBins { bins: 4 })
        );
        assert!("freshweight-bins:0".parse::<SamplerStrategy>().is_err());
        assert!("stratified".parse::<SamplerStrategy>().is_err());
        for s in ["random", "freshweight-bins:7", "variety-stratified"] {
            assert_eq!(s.parse::<SamplerStrategy>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn bins_are_equal_width() {
        let v = [0.0, 0.9, 1.0, 5.0, 9.99, 10.0];
        assert_eq!(bin_assignment(&v, 10), vec![0, 0, 1, 5, 9, 9]);
        assert_eq!(bin_assignment(&[3.0, 3.0], 4), vec![0, 0]);
    }

    #[test]
    fn random_epoch_is_a_permutation() {
        let s = Sampler::new(SamplerStrategy::Random, &[1.0; 9], &vec!["a".to_string(); 9]).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut e = s.epoch(&mut r);
        e.sort();
        assert_eq!(e, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let fw = [1.0, 2.0, 2.5, 9.0, 10.0];
        let vars: Vec<String> = ["a", "a", "b", "c", "c"].iter().map(|s| s.to_string()).collect();
        for strat in [
            SamplerStrategy::Random,
            SamplerStrategy::FreshweightBins { bins: 3 },
            SamplerStrategy::VarietyStratified,
        ] {
            let s = Sampler::new(strat, &fw, &vars).unwrap();
            let total: f64 = s.probabilities().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let s = Sampler::new(SamplerStrategy::VarietyStratified, &fw, &vars).unwrap();
        assert!((s.probabilities()[2] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_and_ragged_inputs() {
        assert!(Sampler::new(SamplerStrategy::Random, &[], &[]).is_err());
        assert!(Sampler::new(SamplerStrategy::Random, &[1.0], &[]).is_err());
    }
}
