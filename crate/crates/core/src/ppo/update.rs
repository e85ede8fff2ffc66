use super::loss::clip_terms;
use super::rollout::{Episode, RlEnv};
use crate::adapter::{Adapter, ValueModel};
use crate::error::{Error, Result};
use crate::kernels::softmax;
use crate::par::sum_in_order;

/// Gradients of one PPO pass, already reduced over the batch.
#[derive(Debug, Clone)]
pub struct PassGrads {
    pub policy: Vec<f64>,
    pub value_adapter: Vec<f64>,
    pub value_head: Vec<f64>,
    /// `-mean_t min(ρA, clip(ρ)A)` over every token of the batch.
    pub policy_loss: f64,
    /// Mean squared error of the value predictions.
    pub value_loss: f64,
    pub clip_fraction: f64,
}

impl PassGrads {
    pub fn total_loss(&self, value_coef: f64) -> f64 {
        self.policy_loss + value_coef * self.value_loss
    }
}

struct EpisodeGrads {
    policy: Vec<f64>,
    value_adapter: Vec<f64>,
    value_head: Vec<f64>,
    objective: f64,
    sq_err: f64,
    clipped: usize,
}

/// Policy-surrogate gradient for one episode, scaled by `scale` (`1/N` over
/// the batch tokens). Returns the adapter gradient, the summed objective and
/// the number of clipped tokens.
pub fn policy_episode_grad(
    env: &RlEnv,
    policy: &Adapter,
    ep: &Episode,
    advantages: &[f64],
    clip_epsilon: f64,
    scale: f64,
) -> Result<(Vec<f64>, f64, usize)> {
    let (prefix, cache) = policy.encode_cached(&ep.feature.0)?;
    let (fwd, new_lp) = env
        .backbone
        .score_continuation(&prefix, &ep.prompt, &ep.tokens)?;
    let terms = clip_terms(&new_lp, &ep.logprobs, advantages, clip_epsilon)?;
    let v = env.backbone.config().vocab_size;
    let mut dlogits = vec![0.0; ep.tokens.len() * v];
    for (j, &tok) in ep.tokens.iter().enumerate() {
        let coef = -scale * terms.dobjective[j];
        if coef == 0.0 {
            continue;
        }
        let p = softmax(&fwd.logits[j * v..(j + 1) * v]);
        let row = &mut dlogits[j * v..(j + 1) * v];
        for (r, q) in row.iter_mut().zip(&p) {
            *r = -coef * q;
        }
        row[tok as usize] += coef;
    }
    let dprefix = env.backbone.backward(&fwd, Some(&dlogits), None, None);
    let mut grads = vec![0.0; policy.params().len()];
    policy.backward(&cache, &dprefix, &mut grads);
    let clipped = terms.clipped.iter().filter(|&&c| c).count();
    Ok((grads, terms.objective.iter().sum(), clipped))
}

/// Gradient of `value_coef · MSE` for one episode, with the MSE normalized by
/// `1/N` through `scale`.
pub fn value_episode_grad(
    env: &RlEnv,
    value: &ValueModel,
    ep: &Episode,
    value_coef: f64,
    scale: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let d = env.backbone.config().d_model;
    let (prefix, cache) = value.adapter.encode_cached(&ep.feature.0)?;
    let (fwd, _) = env
        .backbone
        .score_continuation(&prefix, &ep.prompt, &ep.tokens)?;
    let hidden = fwd.hidden_rows(d);
    let pred = value.head.value(hidden)?;
    let mut sq_err = 0.0;
    let dvalues: Vec<f64> = pred
        .iter()
        .zip(&ep.returns)
        .map(|(p, r)| {
            sq_err += (p - r) * (p - r);
            value_coef * 2.0 * (p - r) * scale
        })
        .collect();
    let mut head_grads = vec![0.0; value.head.params().len()];
    let dhidden = value.head.backward(hidden, &dvalues, &mut head_grads);
    let dprefix = env.backbone.backward(&fwd, None, Some(&dhidden), None);
    let mut adapter_grads = vec![0.0; value.adapter.params().len()];
    value.adapter.backward(&cache, &dprefix, &mut adapter_grads);
    Ok((adapter_grads, head_grads, sq_err))
}

/// Loss and gradients of one full-batch PPO pass. `advantages` holds the
/// (whitened) advantages per episode.
pub fn ppo_pass(
    env: &RlEnv,
    policy: &Adapter,
    value: &ValueModel,
    episodes: &[Episode],
    advantages: &[Vec<f64>],
    clip_epsilon: f64,
    value_coef: f64,
) -> Result<PassGrads> {
    if episodes.len() != advantages.len() {
        return Err(Error::LengthMismatch {
            left: episodes.len(),
            right: advantages.len(),
        });
    }
    let n_tokens: usize = episodes.iter().map(|e| e.tokens.len()).sum();
    if n_tokens == 0 {
        return Err(Error::InvalidArgument(
            "PPO pass over an empty batch".into(),
        ));
    }
    let scale = 1.0 / n_tokens as f64;
    let per = env
        .exec
        .try_map(episodes, |i, ep| -> Result<EpisodeGrads> {
            let (policy_g, objective, clipped) =
                policy_episode_grad(env, policy, ep, &advantages[i], clip_epsilon, scale)?;
            let (value_adapter, value_head, sq_err) =
                value_episode_grad(env, value, ep, value_coef, scale)?;
            Ok(EpisodeGrads {
                policy: policy_g,
                value_adapter,
                value_head,
                objective,
                sq_err,
                clipped,
            })
        })?;
    Ok(PassGrads {
        policy: sum_in_order(
            policy.params().len(),
            per.iter().map(|g| g.policy.as_slice()),
        ),
        value_adapter: sum_in_order(
            value.adapter.params().len(),
            per.iter().map(|g| g.value_adapter.as_slice()),
        ),
        value_head: sum_in_order(
            value.head.params().len(),
            per.iter().map(|g| g.value_head.as_slice()),
        ),
        policy_loss: -per.iter().map(|g| g.objective).sum::<f64>() * scale,
        value_loss: per.iter().map(|g| g.sq_err).sum::<f64>() * scale,
        clip_fraction: per.iter().map(|g| g.clipped).sum::<usize>() as f64 * scale,
    })
}
