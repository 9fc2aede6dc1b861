// SPDX-License-Identifier: Apache-2.0

//! QA sampling and agreement statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReviewError;

pub const DEFAULT_QA_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaOutcome {
    Agree,
    Disagree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSample {
    pub seed: u64,
    pub fraction: f64,
    pub sampled: Vec<String>,
    #[serde(default)]
    pub outcomes: std::collections::BTreeMap<String, QaOutcome>,
}

/// `ceil(fraction * n)` ids drawn without replacement from `accepted`
/// (taken in the given order) by a partial Fisher–Yates shuffle on
/// ChaCha8 seeded with `seed`. Returned sorted.
pub fn sample_ids(accepted: &[String], fraction: f64, seed: u64) -> Result<Vec<String>, ReviewError> {
    if accepted.is_empty() {
        return Err(ReviewError::NothingAccepted);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ReviewError::InvalidTransition(format!("QA fraction {fraction} outside (0, 1]")));
    }
    let n = accepted.len();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut pool: Vec<String> = accepted.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut out = pool[..k].to_vec();
    out.sort();
    Ok(out)
}

/// Cohen's kappa over paired accept/reject verdicts `(first, second)`.
/// When both raters use a single category throughout, chance agreement is 1
/// and kappa is defined as 1.
pub fn compute_iaa(pairs: &[(bool, bool)]) -> Result<f64, ReviewError> {
    if pairs.is_empty() {
        return Err(ReviewError::NoPairs);
    }
    let n = pairs.len() as f64;
    let agree = pairs.iter().filter(|(a, b)| a == b).count() as f64;
    let a_yes = pairs.iter().filter(|(a, _)| *a).count() as f64 / n;
    let b_yes = pairs.iter().filter(|(_, b)| *b).count() as f64 / n;
    let po = agree / n;
    let pe = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("tl_{i:06}")).collect()
    }

    #[test]
    fn sample_size_and_determinism() {
        assert_eq!(sample_ids(&ids(10), 0.1, 7).unwrap().len(), 1);
        assert_eq!(sample_ids(&ids(11), 0.1, 7).unwrap().len(), 2);
        assert_eq!(sample_ids(&ids(40), 0.1, 7).unwrap(), sample_ids(&ids(40), 0.1, 7).unwrap());
        assert_eq!(sample_ids(&[], 0.1, 7), Err(ReviewError::NothingAccepted));
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(compute_iaa(&[(true, true), (false, false)]).unwrap(), 1.0);
        // chance level: a always yes, b alternates
        assert_eq!(compute_iaa(&[(true, true), (true, false)]).unwrap(), 0.0);
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat_n((true, true), 20));
        pairs.extend(std::iter::repeat_n((true, false), 5));
        pairs.extend(std::iter::repeat_n((false, true), 10));
        pairs.extend(std::iter::repeat_n((false, false), 15));
        // po = 35/50, pe = (25/50)(30/50) + (25/50)(20/50) = 0.5
        let po: f64 = 35.0 / 50.0;
        let pe: f64 = 0.5 * 0.6 + 0.5 * 0.4;
        assert!((compute_iaa(&pairs).unwrap() - (po - pe) / (1.0 - pe)).abs() < 1e-12);
        assert!((compute_iaa(&pairs).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(compute_iaa(&[]), Err(ReviewError::NoPairs));
    }
}
