use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gae::compute_gae;
use super::PpoConfig;
use crate::adapter::{Adapter, ValueModel};
use crate::corpus::{FeatureMap, ModalityFeature, TokenId, TokenSequence, Vocabulary, EOS_ID};
use crate::error::{Error, Result};
use crate::lm::{sample, sample_start_token, LanguageModel, PrefixEmbedding};
use crate::par::Exec;
use crate::rewards::{
    aggregate, entropy_reward, kl_penalty, pairing_reward, repetition_penalty, RewardBreakdown,
    RewardConfig,
};
use crate::rng::substream;
use crate::scorer::Scorer;

/// How the token context after the prefix rows is chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// The same prompt tokens for every episode (e.g. a style tag). They are
    /// not part of the scored text.
    Fixed(TokenSequence),
    /// One start token drawn by corpus frequency per episode. It is part of
    /// the scored text.
    FrequencyStart,
}

/// Everything the rollout and update phases read but never write.
pub struct RlEnv<'a> {
    /// Frozen backbone. With an all-zero prefix it is also the reference model.
    pub backbone: &'a LanguageModel,
    pub vocab: &'a Vocabulary,
    pub features: &'a FeatureMap,
    pub scorer: &'a dyn Scorer,
    pub prompt: PromptMode,
    pub rewards: RewardConfig,
    pub exec: Exec,
}

impl RlEnv<'_> {
    pub(crate) fn zero_prefix(&self, rows: usize) -> PrefixEmbedding {
        PrefixEmbedding::zeros(rows, self.backbone.config().d_model)
    }

    /// Scored surface text of an episode.
    pub fn episode_text(&self, prompt: &[TokenId], tokens: &[TokenId]) -> String {
        match self.prompt {
            PromptMode::Fixed(_) => self.vocab.detokenize(tokens),
            PromptMode::FrequencyStart => {
                let mut all = prompt.to_vec();
                all.extend_from_slice(tokens);
                self.vocab.detokenize(&all)
            }
        }
    }

    pub(crate) fn prompt_for<R: Rng>(&self, rng: &mut R) -> Result<TokenSequence> {
        match &self.prompt {
            PromptMode::Fixed(p) => Ok(p.clone()),
            PromptMode::FrequencyStart => Ok(vec![sample_start_token(self.vocab, rng)?]),
        }
    }

    pub(crate) fn check_features(&self, ids: &[u64]) -> Result<()> {
        match ids.iter().find(|&&id| !self.features.contains(id)) {
            Some(&id) => Err(Error::MissingFeature(id)),
            None => Ok(()),
        }
    }
}

/// One sampled episode with everything the update phase needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub input_id: u64,
    pub feature: ModalityFeature,
    pub prompt: TokenSequence,
    pub tokens: TokenSequence,
    pub text: String,
    pub cosine: f64,
    pub logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: RewardBreakdown,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Episode {
    /// Tokens that count for repetition: the generated ones without `<eos>`.
    pub fn content_tokens(&self) -> &[TokenId] {
        match self.tokens.last() {
            Some(&EOS_ID) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub episodes: Vec<Episode>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.episodes.iter().map(|e| e.tokens.len()).sum()
    }
}

/// Per-token values predicted for the positions that emit `tokens`.
pub fn episode_values(
    env: &RlEnv,
    value: &ValueModel,
    feature: &[f32],
    prompt: &[TokenId],
    tokens: &[TokenId],
) -> Result<Vec<f64>> {
    let prefix = value.adapter.encode(feature)?;
    let (fwd, _) = env.backbone.score_continuation(&prefix, prompt, tokens)?;
    value
        .head
        .value(fwd.hidden_rows(env.backbone.config().d_model))
}

/// Rewards for a finished episode, recomputable from its tokens and the
/// recorded log-probabilities.
pub fn episode_rewards(
    cfg: &RewardConfig,
    cosine: f64,
    tokens: &[TokenId],
    logprobs: &[f64],
    ref_logprobs: &[f64],
) -> Result<RewardBreakdown> {
    let kl = kl_penalty(logprobs, ref_logprobs, cfg.kl_coefficient)?;
    let nll = -ref_logprobs.iter().sum::<f64>() / ref_logprobs.len().max(1) as f64;
    let entropy = entropy_reward(nll, tokens.len(), cfg)?;
    let content = match tokens.last() {
        Some(&EOS_ID) => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    let repetition = repetition_penalty(content, cfg);
    Ok(aggregate(
        pairing_reward(cosine, cfg),
        kl,
        entropy,
        repetition,
    ))
}

struct Draft {
    prompt: TokenSequence,
    tokens: TokenSequence,
    logprobs: Vec<f64>,
    ref_logprobs: Vec<f64>,
    values: Vec<f64>,
}

/// Sample one episode per input, score them in one batched call, and fill in
/// rewards, advantages and returns. `stream` distinguishes successive calls
/// under the same seed.
pub fn collect_rollouts(
    env: &RlEnv,
    policy: &Adapter,
    value: &ValueModel,
    inputs: &[u64],
    cfg: &PpoConfig,
    stream: &[u64],
) -> Result<RolloutBatch> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument(
            "collect_rollouts needs at least one input".into(),
        ));
    }
    env.check_features(inputs)?;
    let k = policy.config().prefix_len;
    let drafts = env.exec.try_map(inputs, |i, &id| -> Result<Draft> {
        let mut index = stream.to_vec();
        index.push(i as u64);
        let mut rng = substream(cfg.seed, "rollout", &index);
        let feature = &env.features.get(id)?.0;
        let prefix = policy.encode(feature)?;
        let prompt = env.prompt_for(&mut rng)?;
        let s = sample(
            env.backbone,
            &prefix,
            &prompt,
            cfg.sampling_temperature,
            cfg.rollout_max_tokens,
            &mut rng,
        )?;
        let ref_logprobs = env
            .backbone
            .log_probs(&env.zero_prefix(k), &prompt, &s.tokens)?;
        let values = episode_values(env, value, feature, &prompt, &s.tokens)?;
        Ok(Draft {
            prompt,
            tokens: s.tokens,
            logprobs: s.log_probs,
            ref_logprobs,
            values,
        })
    })?;
    let texts: Vec<String> = drafts
        .iter()
        .map(|d| env.episode_text(&d.prompt, &d.tokens))
        .collect();
    let cosines = env.scorer.score(&texts, inputs)?;
    if cosines.len() != inputs.len() {
        return Err(Error::Scorer(format!(
            "{} scores for {} texts",
            cosines.len(),
            inputs.len()
        )));
    }
    let mut episodes = Vec::with_capacity(inputs.len());
    for (((d, text), cosine), &id) in drafts.into_iter().zip(texts).zip(cosines).zip(inputs) {
        let rewards = episode_rewards(
            &env.rewards,
            cosine,
            &d.tokens,
            &d.logprobs,
            &d.ref_logprobs,
        )?;
        let (advantages, returns) =
            compute_gae(&rewards.per_token, &d.values, cfg.gamma, cfg.gae_lambda)?;
        if advantages.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("advantage for input {id}")));
        }
        episodes.push(Episode {
            input_id: id,
            feature: env.features.get(id)?.clone(),
            prompt: d.prompt,
            tokens: d.tokens,
            text,
            cosine,
            logprobs: d.logprobs,
            ref_logprobs: d.ref_logprobs,
            values: d.values,
            rewards,
            advantages,
            returns,
        });
    }
    Ok(RolloutBatch { episodes })
}
