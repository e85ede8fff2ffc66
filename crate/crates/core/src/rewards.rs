//! The reward stack: modality pairing, KL to the reference model, reference
//! entropy and n-gram repetition, aggregated into per-token rewards.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `-(nll - tau)` above the threshold.
    Linear,
    /// `1 / (nll - tau)` above the threshold.
    Reciprocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub pairing_gain: f64,
    pub pairing_bias: f64,
    pub kl_coefficient: f64,
    pub entropy_gain: f64,
    pub entropy_threshold_numerator: f64,
    pub entropy_mode: EntropyMode,
    pub repetition_gain: f64,
    pub repetition_bias: f64,
    /// Weights for repeated 1-, 2- and 3-grams.
    pub ngram_weights: [f64; 3],
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            pairing_gain: 50.0,
            pairing_bias: -10.0,
            kl_coefficient: 0.2,
            entropy_gain: 0.1,
            entropy_threshold_numerator: 70.0,
            entropy_mode: EntropyMode::Linear,
            repetition_gain: 0.025,
            repetition_bias: 0.0,
            ngram_weights: [1.0; 3],
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        let finite = [
            ("pairing_gain", self.pairing_gain),
            ("pairing_bias", self.pairing_bias),
            ("kl_coefficient", self.kl_coefficient),
            ("entropy_gain", self.entropy_gain),
            (
                "entropy_threshold_numerator",
                self.entropy_threshold_numerator,
            ),
            ("repetition_gain", self.repetition_gain),
            ("repetition_bias", self.repetition_bias),
        ];
        for (k, v) in finite {
            if !v.is_finite() {
                errs.push(format!("rewards.{k}: must be finite"));
            }
        }
        if self
            .ngram_weights
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            errs.push("rewards.ngram_weights: must be finite and nonnegative".into());
        }
        errs
    }
}

/// Named reward components of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub pairing: f64,
    pub kl: Vec<f64>,
    pub entropy: f64,
    pub repetition: f64,
    pub total_terminal: f64,
    pub per_token: Vec<f64>,
}

impl RewardBreakdown {
    pub fn kl_total(&self) -> f64 {
        self.kl.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.per_token.iter().sum()
    }
}

/// `α·cos + β`.
pub fn pairing_reward(cos_sim: f64, cfg: &RewardConfig) -> f64 {
    cfg.pairing_gain * cos_sim + cfg.pairing_bias
}

/// Per-token `-c·(log π(y_t) - log π_ref(y_t))`.
pub fn kl_penalty(
    policy_logprobs: &[f64],
    reference_logprobs: &[f64],
    coefficient: f64,
) -> Result<Vec<f64>> {
    if policy_logprobs.len() != reference_logprobs.len() {
        return Err(Error::LengthMismatch {
            left: policy_logprobs.len(),
            right: reference_logprobs.len(),
        });
    }
    Ok(policy_logprobs
        .iter()
        .zip(reference_logprobs)
        .map(|(p, r)| -coefficient * (p - r))
        .collect())
}

/// Length-dependent NLL threshold `numerator / l`.
pub fn entropy_threshold(length: usize, cfg: &RewardConfig) -> f64 {
    cfg.entropy_threshold_numerator / length as f64
}

/// Penalize a mean reference NLL above `70 / l`.
pub fn entropy_reward(reference_nll_mean: f64, length: usize, cfg: &RewardConfig) -> Result<f64> {
    if length == 0 {
        return Err(Error::InvalidArgument(
            "entropy reward needs length >= 1".into(),
        ));
    }
    let tau = entropy_threshold(length, cfg);
    if reference_nll_mean <= tau {
        return Ok(0.0);
    }
    let excess = reference_nll_mean - tau;
    Ok(match cfg.entropy_mode {
        EntropyMode::Linear => -cfg.entropy_gain * excess,
        EntropyMode::Reciprocal => cfg.entropy_gain / excess,
    })
}

/// Total minus distinct n-grams of order `n`.
pub fn repeated_ngrams(tokens: &[TokenId], n: usize) -> usize {
    if tokens.len() < n || n == 0 {
        return 0;
    }
    let total = tokens.len() - n + 1;
    let distinct: HashSet<&[TokenId]> = tokens.windows(n).collect();
    total - distinct.len()
}

/// `-(α_r · Σ_n w_n · rep_n + β_r)` over n = 1, 2, 3.
pub fn repetition_penalty(tokens: &[TokenId], cfg: &RewardConfig) -> f64 {
    let weighted: f64 = (1..=3)
        .map(|n| cfg.ngram_weights[n - 1] * repeated_ngrams(tokens, n) as f64)
        .sum();
    -(cfg.repetition_gain * weighted + cfg.repetition_bias)
}

/// KL terms at every generated position, the sequence-level components summed
/// onto the final position.
pub fn aggregate(
    pairing: f64,
    kl_terms: Vec<f64>,
    entropy: f64,
    repetition: f64,
) -> RewardBreakdown {
    let total_terminal = pairing + entropy + repetition;
    let mut per_token = kl_terms.clone();
    match per_token.last_mut() {
        Some(last) => *last += total_terminal,
        None => per_token.push(total_terminal),
    }
    RewardBreakdown {
        pairing,
        kl: kl_terms,
        entropy,
        repetition,
        total_terminal,
        per_token,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pairing_constants() {
        let c = RewardConfig::default();
        assert_eq!(pairing_reward(0.5, &c), 15.0);
        assert!(pairing_reward(0.2, &c).abs() < 1e-12);
        assert_eq!(pairing_reward(0.0, &c), -10.0);
    }

    #[test]
    fn kl_terms() {
        assert_eq!(
            kl_penalty(&[-1.0, -2.0], &[-1.0, -2.0], 0.2).unwrap(),
            vec![0.0, 0.0]
        );
        let k = kl_penalty(&[-1.0], &[-2.0], 0.2).unwrap();
        assert!((k[0] + 0.2).abs() < 1e-15);
        assert!(kl_penalty(&[-1.0], &[], 0.2).is_err());
    }

    #[test]
    fn entropy_terms() {
        let c = RewardConfig::default();
        assert_eq!(entropy_threshold(10, &c), 7.0);
        assert_eq!(entropy_reward(6.5, 10, &c).unwrap(), 0.0);
        assert!((entropy_reward(8.0, 10, &c).unwrap() + 0.1).abs() < 1e-12);
        let r = RewardConfig {
            entropy_mode: EntropyMode::Reciprocal,
            ..c.clone()
        };
        assert!((entropy_reward(9.0, 10, &r).unwrap() - 0.05).abs() < 1e-12);
        assert!(entropy_reward(1.0, 0, &c).is_err());
    }

    #[test]
    fn repetition_hand_counts() {
        let c = RewardConfig::default();
        assert_eq!(repeated_ngrams(&[5, 5, 5], 1), 2);
        assert_eq!(repeated_ngrams(&[5, 5, 5], 2), 1);
        assert_eq!(repeated_ngrams(&[5, 5, 5], 3), 0);
        assert!((repetition_penalty(&[5, 5, 5], &c) + 0.075).abs() < 1e-12);
        assert!((repetition_penalty(&[1, 2, 1, 2], &c) + 0.075).abs() < 1e-12);
        assert_eq!(repetition_penalty(&[1, 2, 3, 4], &c), 0.0);
        assert_eq!(repetition_penalty(&[], &c), 0.0);
    }

    #[test]
    fn aggregate_placement() {
        let b = aggregate(0.0, vec![0.0; 3], 0.0, 0.0);
        assert_eq!(b.per_token, vec![0.0; 3]);
        let b = aggregate(15.0, vec![0.0; 3], 0.0, 0.0);
        assert_eq!(b.per_token, vec![0.0, 0.0, 15.0]);
        let b = aggregate(1.0, vec![0.5, -0.25], -0.1, -0.05);
        assert!((b.total() - (1.0 + 0.25 - 0.1 - 0.05)).abs() < 1e-12);
        assert_eq!(b.total_terminal, 1.0 - 0.1 - 0.05);
    }

    proptest! {
        #[test]
        fn pairing_is_affine(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let c = RewardConfig::default();
            prop_assert!(((pairing_reward(a, &c) - pairing_reward(b, &c)) - 50.0 * (a - b)).abs() < 1e-9);
        }

        #[test]
        fn repetition_is_nonpositive_and_zero_iff_no_repeats(tokens in proptest::collection::vec(0u32..5, 0..12)) {
            let c = RewardConfig::default();
            let r = repetition_penalty(&tokens, &c);
            prop_assert!(r <= 0.0);
            let any_repeat = (1..=3).any(|n| repeated_ngrams(&tokens, n) > 0);
            prop_assert_eq!(r == 0.0, !any_repeat);
        }

        #[test]
        fn aggregate_conserves(p in -20.0f64..40.0, e in -1.0f64..0.0, r in -1.0f64..0.0, kl in proptest::collection::vec(-1.0f64..1.0, 1..10)) {
            let b = aggregate(p, kl.clone(), e, r);
            let want = p + e + r + kl.iter().sum::<f64>();
            prop_assert!((b.total() - want).abs() < 1e-9);
            prop_assert_eq!(b.per_token.len(), kl.len());
            let again = aggregate(p, kl, e, r);
            prop_assert_eq!(b, again);
        }
    }
}
