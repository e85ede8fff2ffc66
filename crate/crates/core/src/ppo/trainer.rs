use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde_json::json;

use super::gae::whiten;
use super::metrics::{sample_records, BatchRecord, MetricsLog, RewardStats};
use super::rollout::{collect_rollouts, PromptMode, RlEnv};
use super::update::ppo_pass;
use super::PpoConfig;
use crate::adapter::{Adapter, AdapterCheckpoint, ValueModel};
use crate::corpus::{TokenSequence, EOS_ID};
use crate::error::{Error, Result};
use crate::lm::{greedy_decode, sample_start_token};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::l2_norm;
use crate::rng::substream;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation cosine (the initialization when
    /// nothing improved, the last state when there is no validation split).
    pub best: AdapterCheckpoint,
    pub last: AdapterCheckpoint,
    pub initial_val_cosine: Option<f64>,
    pub best_val_cosine: Option<f64>,
    pub epochs_run: usize,
    pub batches_run: usize,
    pub stopped_early: bool,
}

/// Greedy decode per input; returns the generated tokens (without the
/// prompt) and the scored text.
pub fn greedy_outputs(
    env: &RlEnv,
    policy: &Adapter,
    ids: &[u64],
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<(TokenSequence, String)>> {
    env.check_features(ids)?;
    env.exec.try_map(ids, |_, &id| {
        let prefix = policy.encode(&env.features.get(id)?.0)?;
        let prompt = match &env.prompt {
            PromptMode::Fixed(p) => p.clone(),
            PromptMode::FrequencyStart => vec![sample_start_token(
                env.vocab,
                &mut substream(seed, "greedy_start", &[id]),
            )?],
        };
        let tokens = greedy_decode(env.backbone, &prefix, &prompt, max_tokens)?;
        let text = env.episode_text(&prompt, &tokens);
        Ok((tokens, text))
    })
}

/// Mean scorer cosine of greedy decodes.
pub fn validation_cosine(
    env: &RlEnv,
    policy: &Adapter,
    ids: &[u64],
    max_tokens: usize,
    seed: u64,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let texts: Vec<String> = greedy_outputs(env, policy, ids, max_tokens, seed)?
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let cos = env.scorer.score(&texts, ids)?;
    Ok(cos.iter().sum::<f64>() / cos.len() as f64)
}

/// Repeated 3-grams in greedy decodes, averaged over inputs.
pub fn greedy_trigram_repetition(
    env: &RlEnv,
    policy: &Adapter,
    ids: &[u64],
    max_tokens: usize,
    seed: u64,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let outs = greedy_outputs(env, policy, ids, max_tokens, seed)?;
    let total: usize = outs
        .iter()
        .map(|(toks, _)| {
            let content = match toks.last() {
                Some(&EOS_ID) => &toks[..toks.len() - 1],
                _ => toks.as_slice(),
            };
            crate::rewards::repeated_ngrams(content, 3)
        })
        .sum();
    Ok(total as f64 / ids.len() as f64)
}

struct Dump<'a> {
    dir: Option<&'a Path>,
}

impl Dump<'_> {
    fn diverged(
        &self,
        reason: String,
        state: serde_json::Value,
        policy: &Adapter,
        value: &ValueModel,
        ckpt: &AdapterCheckpoint,
    ) -> Error {
        let dir = self
            .dir
            .map(Path::to_path_buf)
            .unwrap_or_else(std::env::temp_dir);
        let path: PathBuf = dir.join("divergence.json");
        let archive_path = dir.join("divergence.ckpt");
        let snapshot = AdapterCheckpoint {
            policy: policy.clone(),
            value: Some(value.clone()),
            backbone_fingerprint: ckpt.backbone_fingerprint.clone(),
        };
        let body = json!({ "reason": reason, "state": state, "adapter_checkpoint": archive_path });
        let written = std::fs::create_dir_all(&dir).is_ok()
            && snapshot.to_archive().write(&archive_path).is_ok()
            && std::fs::write(&path, serde_json::to_vec_pretty(&body).unwrap_or_default()).is_ok();
        Error::Diverged {
            reason,
            dump: if written {
                path.display().to_string()
            } else {
                "<dump failed>".into()
            },
        }
    }
}

/// PPO over the adapter (and value model) with the backbone frozen.
pub fn train(
    init: &AdapterCheckpoint,
    cfg: &PpoConfig,
    env: &RlEnv,
    train_ids: &[u64],
    val_ids: &[u64],
    log: &mut MetricsLog,
    dump_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if !env.backbone.is_frozen() {
        return Err(Error::InvalidArgument(
            "backbone must be frozen for RL training".into(),
        ));
    }
    init.ensure_backbone(&env.backbone.fingerprint())?;
    if train_ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    env.check_features(train_ids)?;
    env.check_features(val_ids)?;
    let dump = Dump { dir: dump_dir };

    let mut policy = init.policy.clone();
    let mut value = init
        .value
        .clone()
        .unwrap_or_else(|| ValueModel::from_policy(&policy));
    let snapshot = |policy: &Adapter, value: &ValueModel| AdapterCheckpoint {
        policy: policy.clone(),
        value: Some(value.clone()),
        backbone_fingerprint: init.backbone_fingerprint.clone(),
    };

    let batches_per_epoch = train_ids.len().div_ceil(cfg.batch_size);
    let mut planned = cfg.max_epochs * batches_per_epoch;
    if cfg.max_batches > 0 {
        planned = planned.min(cfg.max_batches);
    }
    let opt_cfg = AdamWConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        epsilon: cfg.adam_epsilon,
        weight_decay: cfg.weight_decay,
        decay_steps: if cfg.linear_decay {
            planned * cfg.ppo_epochs
        } else {
            0
        },
        max_grad_norm: cfg.max_grad_norm,
    };
    let mut opt_policy = AdamW::new(opt_cfg, policy.params().len());
    let mut opt_value = AdamW::new(opt_cfg, value.adapter.params().len());
    let mut opt_head = AdamW::new(opt_cfg, value.head.params().len());

    let validate = |p: &Adapter| -> Result<Option<f64>> {
        if val_ids.is_empty() {
            Ok(None)
        } else {
            validation_cosine(env, p, val_ids, cfg.rollout_max_tokens, cfg.seed).map(Some)
        }
    };
    let initial_val = if cfg.max_epochs > 0 {
        validate(&policy)?
    } else {
        None
    };
    let mut best = snapshot(&policy, &value);
    let mut best_val = initial_val;
    let mut since_best = 0;
    let mut batches_run = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;

    'epochs: for epoch in 0..cfg.max_epochs {
        if cfg.max_batches > 0 && batches_run >= cfg.max_batches {
            break;
        }
        epochs_run += 1;
        let mut order = train_ids.to_vec();
        order.shuffle(&mut substream(cfg.seed, "shuffle", &[epoch as u64]));
        let mut pending: Option<BatchRecord> = None;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_batches > 0 && batches_run >= cfg.max_batches {
                break;
            }
            if let Some(r) = pending.take() {
                log.append(r)?;
            }
            let batch = collect_rollouts(
                env,
                &policy,
                &value,
                chunk,
                cfg,
                &[epoch as u64, batches_run as u64],
            )?;
            let mut advantages: Vec<Vec<f64>> = batch
                .episodes
                .iter()
                .map(|e| e.advantages.clone())
                .collect();
            if cfg.whiten_advantages {
                let mut flat: Vec<f64> = advantages.iter().flatten().copied().collect();
                whiten(&mut flat);
                let mut it = flat.into_iter();
                for a in &mut advantages {
                    for x in a.iter_mut() {
                        *x = it.next().expect("same length");
                    }
                }
            }
            let learning_rate = opt_policy.current_lr();
            let (mut pl, mut vl, mut cf, mut grad_norm) = (0.0, 0.0, 0.0, 0.0);
            for pass_idx in 0..cfg.ppo_epochs {
                let pass = match ppo_pass(
                    env,
                    &policy,
                    &value,
                    &batch.episodes,
                    &advantages,
                    cfg.clip_epsilon,
                    cfg.value_coef,
                ) {
                    Ok(p) => p,
                    Err(Error::NonFinite(what)) => {
                        let state = json!({ "epoch": epoch, "batch": batches_run, "pass": pass_idx, "what": what });
                        return Err(dump.diverged(
                            format!("non-finite {what}"),
                            state,
                            &policy,
                            &value,
                            init,
                        ));
                    }
                    Err(e) => return Err(e),
                };
                let loss = pass.total_loss(cfg.value_coef);
                let grads_finite = pass
                    .policy
                    .iter()
                    .chain(&pass.value_adapter)
                    .chain(&pass.value_head)
                    .all(|g| g.is_finite());
                if !loss.is_finite() || !grads_finite {
                    let state = json!({
                        "epoch": epoch, "batch": batches_run, "pass": pass_idx,
                        "policy_loss": pass.policy_loss.to_string(), "value_loss": pass.value_loss.to_string(),
                        "grads_finite": grads_finite, "texts": batch.episodes.iter().map(|e| &e.text).collect::<Vec<_>>(),
                    });
                    return Err(dump.diverged("NaN loss".into(), state, &policy, &value, init));
                }
                if pass_idx == 0 {
                    grad_norm = l2_norm(&pass.policy);
                }
                pl += pass.policy_loss;
                vl += pass.value_loss;
                cf += pass.clip_fraction;
                opt_policy.step(policy.params_mut(), &pass.policy);
                opt_value.step(value.adapter.params_mut(), &pass.value_adapter);
                opt_head.step(value.head.params_mut(), &pass.value_head);
            }
            let passes = cfg.ppo_epochs.max(1) as f64;
            let samples = sample_records(&batch);
            pending = Some(BatchRecord {
                epoch,
                batch: batches_run,
                rewards: RewardStats::from_samples(&samples),
                policy_loss: pl / passes,
                value_loss: vl / passes,
                clip_fraction: cf / passes,
                grad_norm,
                learning_rate,
                val_cosine: None,
                samples,
            });
            batches_run += 1;
        }
        let val = validate(&policy)?;
        if let Some(r) = pending.as_mut() {
            r.val_cosine = val;
        }
        if let Some(r) = pending.take() {
            log.append(r)?;
        }
        match (val, best_val) {
            (Some(v), Some(b)) if v > b => {
                best_val = Some(v);
                best = snapshot(&policy, &value);
                since_best = 0;
            }
            (Some(_), Some(_)) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break 'epochs;
                }
            }
            _ => best = snapshot(&policy, &value),
        }
    }

    Ok(TrainOutcome {
        best,
        last: snapshot(&policy, &value),
        initial_val_cosine: initial_val,
        best_val_cosine: best_val,
        epochs_run,
        batches_run,
        stopped_early,
    })
}
