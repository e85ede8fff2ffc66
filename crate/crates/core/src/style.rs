//! Maximum-likelihood training: style-prompt pre-tuning of the backbone and
//! supervised (feature, caption) finetuning of the adapter or of both.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterCheckpoint};
use crate::corpus::{
    style_prompt, FeatureMap, StyledDocument, TokenId, TokenSequence, Vocabulary, EOS_ID, UNK_ID,
};
use crate::error::{Error, Result};
use crate::kernels::softmax;
use crate::lm::{LanguageModel, LmForward, PrefixEmbedding};
use crate::optim::{AdamW, AdamWConfig};
use crate::par::{sum_in_order, Exec};
use crate::rng::substream;

/// Which parameters an MLE run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    BackboneOnly,
    AdapterOnly,
    Full,
}

impl Regime {
    fn trains_backbone(self) -> bool {
        matches!(self, Regime::BackboneOnly | Regime::Full)
    }

    fn trains_adapter(self) -> bool {
        matches!(self, Regime::AdapterOnly | Regime::Full)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleTuneConfig {
    pub styles: Vec<String>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub regime: Regime,
    /// Number of all-zero prefix rows placed before the text, matching the
    /// adapter's prefix length so positions line up with RL-time inputs.
    pub prefix_len: usize,
    /// Share of documents, resampled every epoch, whose prefix rows hold the
    /// embeddings of a random subset of their own words instead of zeros.
    /// Teaches the backbone to read its prefix slots from text alone.
    pub context_rate: f64,
    /// Set from the experiment seed when run through a config.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for StyleTuneConfig {
    fn default() -> Self {
        Self {
            styles: vec!["caption".into(), "story".into()],
            epochs: 10,
            learning_rate: 5e-4,
            batch_size: 16,
            weight_decay: 0.0,
            max_grad_norm: 1.0,
            regime: Regime::BackboneOnly,
            prefix_len: 10,
            context_rate: 0.5,
            seed: 0,
        }
    }
}

impl StyleTuneConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.styles {
            if !seen.insert(s) {
                p.push(format!("style.styles: duplicate tag {s:?}"));
            }
            if s.is_empty() || s.contains(char::is_whitespace) {
                p.push(format!("style.styles: invalid tag {s:?}"));
            }
        }
        if self.batch_size == 0 {
            p.push("style.batch_size: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.context_rate) {
            p.push(format!(
                "style.context_rate: must be in [0, 1], got {}",
                self.context_rate
            ));
        }
        if !(self.learning_rate > 0.0) {
            p.push(format!(
                "style.learning_rate: must be positive, got {}",
                self.learning_rate
            ));
        }
        p
    }

    fn optimizer(&self, decay_steps: usize) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            max_grad_norm: self.max_grad_norm,
            decay_steps,
            ..AdamWConfig::default()
        }
    }
}

/// Prompt tokens for a style tag; the empty tag means no prompt.
pub fn style_prompt_tokens(vocab: &Vocabulary, tag: &str) -> TokenSequence {
    if tag.is_empty() {
        Vec::new()
    } else {
        vocab.tokenize(&style_prompt(tag))
    }
}

/// Body tokens followed by `<eos>`.
pub fn target_tokens(vocab: &Vocabulary, body: &str) -> TokenSequence {
    let mut t = vocab.tokenize(body);
    t.push(EOS_ID);
    t
}

/// Mean per-token negative log-likelihood of `target` after the prefix rows
/// and `prompt`.
pub fn mean_nll(
    model: &LanguageModel,
    prefix: &PrefixEmbedding,
    prompt: &[TokenId],
    target: &[TokenId],
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::InvalidArgument("empty target".into()));
    }
    let lps = model.log_probs(prefix, prompt, target)?;
    Ok(-lps.iter().sum::<f64>() / lps.len() as f64)
}

/// `d(sum NLL · scale)/d logits` for the scored rows.
fn nll_dlogits(
    fwd: &LmForward,
    target: &[TokenId],
    vocab_size: usize,
    scale: f64,
) -> (Vec<f64>, f64) {
    let mut d = vec![0.0; target.len() * vocab_size];
    let mut nll = 0.0;
    for (j, &tok) in target.iter().enumerate() {
        let p = softmax(&fwd.logits[j * vocab_size..(j + 1) * vocab_size]);
        nll -= p[tok as usize].ln();
        let row = &mut d[j * vocab_size..(j + 1) * vocab_size];
        for (r, q) in row.iter_mut().zip(&p) {
            *r = q * scale;
        }
        row[tok as usize] -= scale;
    }
    (d, nll)
}

#[derive(Clone)]
struct Example {
    prompt: TokenSequence,
    target: TokenSequence,
    feature: Option<Vec<f32>>,
    context: TokenSequence,
}

struct ExampleGrads {
    backbone: Option<Vec<f64>>,
    adapter: Option<Vec<f64>>,
    nll: f64,
}

fn example_grads(
    model: &LanguageModel,
    adapter: Option<&Adapter>,
    ex: &Example,
    regime: Regime,
    k: usize,
    scale: f64,
) -> Result<ExampleGrads> {
    let d = model.config().d_model;
    let (prefix, cache) = match (adapter, &ex.feature) {
        (Some(a), Some(f)) => {
            let (p, c) = a.encode_cached(f)?;
            (p, Some(c))
        }
        _ if !ex.context.is_empty() => (model.embed_as_prefix(&ex.context, k)?, None),
        _ => (PrefixEmbedding::zeros(k, d), None),
    };
    let (fwd, _) = model.score_continuation(&prefix, &ex.prompt, &ex.target)?;
    let (dlogits, nll) = nll_dlogits(&fwd, &ex.target, model.config().vocab_size, scale);
    let mut backbone = regime
        .trains_backbone()
        .then(|| vec![0.0; model.params().len()]);
    let dprefix = model.backward(&fwd, Some(&dlogits), None, backbone.as_deref_mut());
    let adapter_grads = match (adapter, cache) {
        (Some(a), Some(c)) if regime.trains_adapter() => {
            let mut g = vec![0.0; a.params().len()];
            a.backward(&c, &dprefix, &mut g);
            Some(g)
        }
        _ => None,
    };
    Ok(ExampleGrads {
        backbone,
        adapter: adapter_grads,
        nll,
    })
}

/// One optimizer step on a minibatch; returns the summed NLL.
#[allow(clippy::too_many_arguments)]
fn mle_step(
    model: &mut LanguageModel,
    adapter: Option<&mut Adapter>,
    batch: &[&Example],
    regime: Regime,
    k: usize,
    opt_backbone: &mut AdamW,
    opt_adapter: Option<&mut AdamW>,
    exec: Exec,
) -> Result<f64> {
    let n_tokens: usize = batch.iter().map(|e| e.target.len()).sum();
    let scale = 1.0 / n_tokens.max(1) as f64;
    let per = {
        let m: &LanguageModel = model;
        let a = adapter.as_deref();
        exec.try_map(batch, |_, ex| example_grads(m, a, ex, regime, k, scale))?
    };
    let nll: f64 = per.iter().map(|g| g.nll).sum();
    if !nll.is_finite() {
        return Err(Error::NonFinite("MLE loss".into()));
    }
    if regime.trains_backbone() {
        let g = sum_in_order(
            model.params().len(),
            per.iter().filter_map(|g| g.backbone.as_deref()),
        );
        opt_backbone.step(model.params_mut(), &g);
    }
    if let (Some(a), Some(opt)) = (adapter, opt_adapter) {
        if regime.trains_adapter() {
            let g = sum_in_order(
                a.params().len(),
                per.iter().filter_map(|g| g.adapter.as_deref()),
            );
            opt.step(a.params_mut(), &g);
        }
    }
    Ok(nll)
}

/// Up to `k` distinct words of `target` (no `<eos>`/`<unk>`) in random order.
fn sample_context<R: Rng>(target: &[TokenId], k: usize, rng: &mut R) -> TokenSequence {
    let mut pool: Vec<TokenId> = target
        .iter()
        .copied()
        .filter(|&t| t != EOS_ID && t != UNK_ID)
        .collect();
    pool.sort_unstable();
    pool.dedup();
    pool.shuffle(rng);
    if pool.is_empty() || k == 0 {
        return Vec::new();
    }
    let n = rng.gen_range(1..=pool.len().min(k));
    pool.truncate(n);
    pool
}

/// Outcome of [`style_finetune`].
#[derive(Debug, Clone)]
pub struct StyleTuneOutcome {
    pub backbone: LanguageModel,
    /// Mean per-token training NLL of each epoch.
    pub epoch_nll: Vec<f64>,
}

/// MLE on `"tag: body <eos>"` with the loss over body and `<eos>` only. An
/// empty tag trains on the bare body.
pub fn style_finetune(
    backbone: LanguageModel,
    vocab: &Vocabulary,
    docs: &[StyledDocument],
    cfg: &StyleTuneConfig,
    exec: Exec,
) -> Result<StyleTuneOutcome> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let examples: Vec<Example> = docs
        .iter()
        .map(|d| {
            if !d.style_tag.is_empty() && !cfg.styles.contains(&d.style_tag) {
                return Err(Error::UnknownStyle(d.style_tag.clone()));
            }
            Ok(Example {
                prompt: style_prompt_tokens(vocab, &d.style_tag),
                target: target_tokens(vocab, &d.body),
                feature: None,
                context: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    let mut model = backbone.unfreeze();
    let steps = cfg.epochs * examples.len().div_ceil(cfg.batch_size);
    let mut opt = AdamW::new(cfg.optimizer(steps), model.params().len());
    let mut epoch_nll = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let n_tokens: usize = examples.iter().map(|e| e.target.len()).sum();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, "style_shuffle", &[epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let owned: Vec<Example> = chunk
                .iter()
                .map(|&i| {
                    let mut ex = examples[i].clone();
                    let mut rng = substream(cfg.seed, "style_context", &[epoch as u64, i as u64]);
                    if rng.gen_bool(cfg.context_rate) {
                        ex.context = sample_context(&ex.target, cfg.prefix_len, &mut rng);
                    }
                    ex
                })
                .collect();
            let batch: Vec<&Example> = owned.iter().collect();
            total += mle_step(
                &mut model,
                None,
                &batch,
                Regime::BackboneOnly,
                cfg.prefix_len,
                &mut opt,
                None,
                exec,
            )?;
        }
        epoch_nll.push(total / n_tokens as f64);
    }
    Ok(StyleTuneOutcome {
        backbone: model.freeze(),
        epoch_nll,
    })
}

/// Mean NLL of `body <eos>` after the prompt for `tag`, with a zero prefix.
pub fn style_nll(
    backbone: &LanguageModel,
    vocab: &Vocabulary,
    prefix_len: usize,
    tag: &str,
    body: &str,
) -> Result<f64> {
    let prefix = PrefixEmbedding::zeros(prefix_len, backbone.config().d_model);
    mean_nll(
        backbone,
        &prefix,
        &style_prompt_tokens(vocab, tag),
        &target_tokens(vocab, body),
    )
}

/// A (feature id, target caption) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub input_id: u64,
    pub target: TokenSequence,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: AdapterCheckpoint,
    pub backbone: LanguageModel,
    /// Validation NLL before training (index 0) and after each epoch.
    pub val_nll: Vec<f64>,
    pub train_nll: Vec<f64>,
}

impl FinetuneOutcome {
    /// First epoch whose validation NLL is at or below `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.val_nll.iter().position(|&v| v <= threshold)
    }

    pub fn best_val_nll(&self) -> f64 {
        self.val_nll.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Mean per-token NLL over pairs given the adapter prefix.
pub fn pairs_nll(
    model: &LanguageModel,
    adapter: &Adapter,
    features: &FeatureMap,
    prompt: &[TokenId],
    pairs: &[Pair],
    exec: Exec,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptySplit);
    }
    let per = exec.try_map(pairs, |_, p| -> Result<(f64, usize)> {
        let prefix = adapter.encode(&features.get(p.input_id)?.0)?;
        let lps = model.log_probs(&prefix, prompt, &p.target)?;
        Ok((-lps.iter().sum::<f64>(), lps.len()))
    })?;
    let nll: f64 = per.iter().map(|x| x.0).sum();
    let n: usize = per.iter().map(|x| x.1).sum();
    Ok(nll / n.max(1) as f64)
}

/// Paired MLE: the adapter alone (`AdapterOnly`) or adapter and backbone
/// (`Full`). The returned checkpoint is the final state.
#[allow(clippy::too_many_arguments)]
pub fn supervised_finetune(
    init: &AdapterCheckpoint,
    backbone: LanguageModel,
    features: &FeatureMap,
    prompt: &[TokenId],
    train_pairs: &[Pair],
    val_pairs: &[Pair],
    cfg: &StyleTuneConfig,
    exec: Exec,
) -> Result<FinetuneOutcome> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    init.ensure_backbone(&backbone.fingerprint())?;
    if train_pairs.is_empty() {
        return Err(Error::EmptySplit);
    }
    for p in train_pairs.iter().chain(val_pairs) {
        if !features.contains(p.input_id) {
            return Err(Error::MissingFeature(p.input_id));
        }
    }
    let examples: Vec<Example> = train_pairs
        .iter()
        .map(|p| {
            Ok(Example {
                prompt: prompt.to_vec(),
                target: p.target.clone(),
                feature: Some(features.get(p.input_id)?.0.clone()),
                context: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    let mut model = if cfg.regime.trains_backbone() {
        backbone.unfreeze()
    } else {
        backbone
    };
    let mut adapter = init.policy.clone();
    let steps = cfg.epochs * examples.len().div_ceil(cfg.batch_size);
    let mut opt_b = AdamW::new(cfg.optimizer(steps), model.params().len());
    let mut opt_a = AdamW::new(cfg.optimizer(steps), adapter.params().len());
    let val = |m: &LanguageModel, a: &Adapter| -> Result<f64> {
        if val_pairs.is_empty() {
            Ok(f64::NAN)
        } else {
            pairs_nll(m, a, features, prompt, val_pairs, exec)
        }
    };
    let mut val_nll = vec![val(&model, &adapter)?];
    let mut train_nll = Vec::with_capacity(cfg.epochs);
    let n_tokens: usize = examples.iter().map(|e| e.target.len()).sum();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut substream(
            cfg.seed,
            "finetune_shuffle",
            &[epoch as u64],
        ));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            total += mle_step(
                &mut model,
                Some(&mut adapter),
                &batch,
                cfg.regime,
                cfg.prefix_len,
                &mut opt_b,
                Some(&mut opt_a),
                exec,
            )?;
        }
        train_nll.push(total / n_tokens as f64);
        val_nll.push(val(&model, &adapter)?);
    }
    let model = model.freeze();
    let checkpoint = AdapterCheckpoint {
        policy: adapter,
        value: init.value.clone(),
        backbone_fingerprint: model.fingerprint(),
    };
    Ok(FinetuneOutcome {
        checkpoint,
        backbone: model,
        val_nll,
        train_nll,
    })
}
