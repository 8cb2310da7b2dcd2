use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Size of the training portion of the non-test samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSize {
    /// `floor(fraction · n)` train, the remainder validation.
    Fraction(f64),
    /// Exact counts; they must add up to the non-test sample count.
    Counts { train: usize, val: usize },
}

impl Default for TrainSize {
    fn default() -> Self {
        TrainSize::Fraction(0.75)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Held out for the single final evaluation.
    pub test_ids: Vec<String>,
    pub train_size: TrainSize,
    /// Seed of the train/validation shuffle.
    pub seed: u64,
    pub allow_empty_val: bool,
}

/// Indices into the id list passed to [`split`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions `ids` into disjoint train/validation/test index sets. Test is
/// exactly `spec.test_ids`; the rest is shuffled with `spec.seed` and cut.
pub fn split(ids: &[String], spec: &SplitSpec) -> Result<Split> {
    let wanted: HashSet<&str> = spec.test_ids.iter().map(String::as_str).collect();
    let present: HashSet<&str> = ids.iter().map(String::as_str).collect();
    if let Some(missing) = spec.test_ids.iter().find(|id| !present.contains(id.as_str())) {
        return Err(DataError::UnknownTestId(missing.clone()));
    }
    let (test, mut rest): (Vec<usize>, Vec<usize>) =
        (0..ids.len()).partition(|&i| wanted.contains(ids[i].as_str()));
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    let n = rest.len();
    let n_train = match spec.train_size {
        TrainSize::Fraction(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(DataError::InvalidFraction(f));
            }
            (f * n as f64).floor() as usize
        }
        TrainSize::Counts { train, val } => {
            if train + val != n {
                return Err(DataError::SplitCounts {
                    train,
                    val,
                    available: n,
                });
            }
            train
        }
    };
    if n_train == 0 {
        return Err(DataError::Empty);
    }
    if n_train == n && !spec.allow_empty_val {
        return Err(DataError::EmptyValidation);
    }
    let val = rest.split_off(n_train);
    Ok(Split {
        train: rest,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn default_fraction_on_338_gives_253_and_85() {
        let s = split(&ids(338), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (253, 85, 0));
    }

    #[test]
    fn explicit_counts() {
        let spec = SplitSpec {
            train_size: TrainSize::Counts { train: 270, val: 68 },
            ..SplitSpec::default()
        };
        let s = split(&ids(338), &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (270, 68));
        let bad = SplitSpec {
            train_size: TrainSize::Counts { train: 270, val: 60 },
            ..SplitSpec::default()
        };
        assert!(matches!(split(&ids(338), &bad), Err(DataError::SplitCounts { .. })));
    }

    #[test]
    fn full_fraction_needs_opt_in() {
        let spec = SplitSpec {
            train_size: TrainSize::Fraction(1.0),
            ..SplitSpec::default()
        };
        assert!(matches!(split(&ids(10), &spec), Err(DataError::EmptyValidation)));
        let spec = SplitSpec {
            allow_empty_val: true,
            ..spec
        };
        assert_eq!(split(&ids(10), &spec).unwrap().val.len(), 0);
        let zero = SplitSpec {
            train_size: TrainSize::Fraction(0.0),
            ..SplitSpec::default()
        };
        assert!(matches!(split(&ids(10), &zero), Err(DataError::InvalidFraction(_))));
    }

    #[test]
    fn unknown_test_id_is_an_error() {
        let spec = SplitSpec {
            test_ids: vec!["nope".into()],
            ..SplitSpec::default()
        };
        assert!(matches!(split(&ids(5), &spec), Err(DataError::UnknownTestId(_))));
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_complete_and_seeded(
            n in 8usize..200, n_test in 0usize..4, frac in 0.3f64..0.95, seed in any::<u64>()
        ) {
            let all = ids(n);
            let spec = SplitSpec {
                test_ids: all[..n_test].to_vec(),
                train_size: TrainSize::Fraction(frac),
                seed,
                allow_empty_val: true,
            };
            let s = split(&all, &spec).unwrap();
            let mut seen: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(s.train.len(), (frac * (n - n_test) as f64).floor() as usize);
            prop_assert_eq!(&s.test, &(0..n_test).collect::<Vec<_>>());
            prop_assert_eq!(split(&all, &spec).unwrap(), s);
        }
    }
}
