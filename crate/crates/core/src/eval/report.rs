use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bleu::bleu4_text;
use super::cider::cider;
use crate::adapter::AdapterCheckpoint;
use crate::error::{Error, Result};
use crate::params::Fingerprint;
use crate::ppo::{greedy_outputs, RlEnv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSelection {
    pub bleu4: bool,
    pub cider: bool,
    pub oracle: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self {
            bleu4: true,
            cider: true,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub input_id: u64,
    pub text: String,
    pub cosine: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_achievable: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_hash: String,
    pub backbone_fingerprint: Fingerprint,
    pub split: String,
    pub count: usize,
    pub mean_cosine: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_best_achievable: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
    pub records: Vec<EvalRecord>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl EvalReport {
    /// Corpus aggregates recomputed from the per-id records.
    pub fn recompute(&self) -> (f64, Option<f64>, Option<f64>, Option<f64>) {
        let r = &self.records;
        let cos = mean(r.iter().map(|x| x.cosine));
        let best = r
            .iter()
            .map(|x| x.best_achievable)
            .collect::<Option<Vec<f64>>>()
            .map(|v| mean(v.into_iter()));
        let bleu = r
            .iter()
            .map(|x| x.bleu4)
            .collect::<Option<Vec<f64>>>()
            .map(|v| mean(v.into_iter()));
        let cid = r
            .iter()
            .map(|x| x.cider)
            .collect::<Option<Vec<f64>>>()
            .map(|v| mean(v.into_iter()));
        (cos, best, bleu, cid)
    }
}

/// Inputs to [`evaluate_run`] beyond the model.
pub struct EvalInputs<'a> {
    pub split: &'a str,
    pub ids: &'a [u64],
    /// Reference captions per id, needed for BLEU and CIDEr.
    pub references: Option<&'a BTreeMap<u64, Vec<String>>>,
    /// Best achievable cosine per id, needed for the oracle ratio.
    pub best_achievable: Option<&'a BTreeMap<u64, f64>>,
    pub max_tokens: usize,
    pub seed: u64,
}

/// Greedy-decode every split input with the checkpoint's policy and compute
/// the selected metrics.
pub fn evaluate_run(
    env: &RlEnv,
    checkpoint: &AdapterCheckpoint,
    checkpoint_hash: &str,
    inputs: &EvalInputs,
    selection: MetricSelection,
) -> Result<EvalReport> {
    let fp = env.backbone.fingerprint();
    checkpoint.ensure_backbone(&fp)?;
    if inputs.ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let outs = greedy_outputs(
        env,
        &checkpoint.policy,
        inputs.ids,
        inputs.max_tokens,
        inputs.seed,
    )?;
    let texts: Vec<String> = outs.into_iter().map(|(_, t)| t).collect();
    let cos = env.scorer.score(&texts, inputs.ids)?;

    let refs = if selection.bleu4 || selection.cider {
        let r = inputs
            .references
            .ok_or_else(|| Error::InvalidArgument("BLEU/CIDEr need reference captions".into()))?;
        Some(r)
    } else {
        None
    };
    let cider_scores = match (selection.cider, refs) {
        (true, Some(r)) => {
            let cands: BTreeMap<u64, String> = inputs
                .ids
                .iter()
                .copied()
                .zip(texts.iter().cloned())
                .collect();
            Some(cider(&cands, r)?.per_id)
        }
        _ => None,
    };
    let best = if selection.oracle {
        Some(inputs.best_achievable.ok_or_else(|| {
            Error::InvalidArgument("oracle ratio needs best achievable rewards".into())
        })?)
    } else {
        None
    };

    let mut records = Vec::with_capacity(inputs.ids.len());
    for (i, &id) in inputs.ids.iter().enumerate() {
        let bleu = match (selection.bleu4, refs) {
            (true, Some(r)) => {
                let rs = r
                    .get(&id)
                    .ok_or_else(|| Error::InvalidArgument(format!("no references for id {id}")))?;
                Some(bleu4_text(&texts[i], rs))
            }
            _ => None,
        };
        let b =
            match best {
                Some(m) => Some(*m.get(&id).ok_or_else(|| {
                    Error::InvalidArgument(format!("no oracle value for id {id}"))
                })?),
                None => None,
            };
        records.push(EvalRecord {
            input_id: id,
            text: texts[i].clone(),
            cosine: cos[i],
            best_achievable: b,
            bleu4: bleu,
            cider: cider_scores.as_ref().map(|c| c[&id]),
        });
    }
    let mut report = EvalReport {
        checkpoint_hash: checkpoint_hash.to_string(),
        backbone_fingerprint: fp,
        split: inputs.split.to_string(),
        count: records.len(),
        mean_cosine: 0.0,
        mean_best_achievable: None,
        oracle_ratio: None,
        bleu4: None,
        cider: None,
        records,
    };
    let (c, b, bl, ci) = report.recompute();
    report.mean_cosine = c;
    report.mean_best_achievable = b;
    report.oracle_ratio = b.map(|b| c / b);
    report.bleu4 = bl;
    report.cider = ci;
    Ok(report)
}
