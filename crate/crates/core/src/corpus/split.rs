use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitFractions {
    /// 904 / 110 / 157 out of 1,171 problems.
    pub const STANDARD: SplitFractions = SplitFractions {
        train: 904.0 / 1171.0,
        dev: 110.0 / 1171.0,
        test: 157.0 / 1171.0,
    };

    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self> {
        let f = SplitFractions { train, dev, test };
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::invalid("split fractions must lie in [0, 1]"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }

    /// `(train, dev, test)` sizes for `n` items: dev and test are rounded,
    /// the remainder goes to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let dev = (self.dev * n as f64).round() as usize;
        let test = ((self.test * n as f64).round() as usize).min(n - dev.min(n));
        let dev = dev.min(n);
        (n - dev - test, dev, test)
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::STANDARD
    }
}

pub type SplitAssignment = BTreeMap<String, Split>;

/// Assigns each id to exactly one split, deterministically in
/// `(ids, fractions, seed)` and independent of the order of `ids`.
pub fn assign_splits(
    ids: &[String],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot split an empty problem list"));
    }
    fractions.validate()?;
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Duplicate {
            what: "problem id",
            key: w[0].clone(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let (train, dev, _) = fractions.sizes(sorted.len());
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + dev {
                Split::Dev
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("q{i}")).collect()
    }

    fn counts(a: &SplitAssignment) -> (usize, usize, usize) {
        let c = |s| a.values().filter(|&&v| v == s).count();
        (c(Split::Train), c(Split::Dev), c(Split::Test))
    }

    #[test]
    fn standard_sizes_on_1171() {
        let a = assign_splits(&ids(1171), SplitFractions::STANDARD, 0).unwrap();
        assert_eq!(counts(&a), (904, 110, 157));
    }

    #[test]
    fn deterministic_and_order_free() {
        let mut v = ids(50);
        let a = assign_splits(&v, SplitFractions::STANDARD, 9).unwrap();
        v.reverse();
        assert_eq!(a, assign_splits(&v, SplitFractions::STANDARD, 9).unwrap());
        assert_ne!(a, assign_splits(&v, SplitFractions::STANDARD, 10).unwrap());
    }

    #[test]
    fn degenerate_all_train() {
        let a = assign_splits(&ids(7), SplitFractions::new(1.0, 0.0, 0.0).unwrap(), 3).unwrap();
        assert_eq!(counts(&a), (7, 0, 0));
    }

    #[test]
    fn errors() {
        assert!(assign_splits(&[], SplitFractions::STANDARD, 0).is_err());
        assert!(SplitFractions::new(0.5, 0.2, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn assignment_is_a_partition(n in 1usize..300, dev in 0.0f64..0.5, seed: u64) {
            let f = SplitFractions::new(1.0 - dev - dev / 2.0, dev, dev / 2.0).unwrap();
            let v = ids(n);
            let a = assign_splits(&v, f, seed).unwrap();
            prop_assert_eq!(a.len(), n);
            prop_assert!(v.iter().all(|id| a.contains_key(id)));
            let (tr, d, te) = counts(&a);
            prop_assert_eq!(tr + d + te, n);
            prop_assert_eq!(d, (dev * n as f64).round() as usize);
        }
    }
}
