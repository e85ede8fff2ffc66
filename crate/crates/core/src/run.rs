//! Run directories: every pipeline stage reads its inputs from and writes its
//! artifacts into one self-describing directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterCheckpoint, AdapterConfig};
use crate::checkpoint::Archive;
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_vocabulary, load_feature_file, read_corpus, style_prompt, write_corpus,
    write_feature_file, CorpusLine, FeatureMap, Scene, StyledDocument, TokenSequence, Vocabulary,
    World,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, likelihood_rank, EvalInputs, EvalReport, MetricSelection};
use crate::lm::{LanguageModel, LmConfig};
use crate::params::Fingerprint;
use crate::ppo::{
    greedy_outputs, read_metrics, train, MetricsLog, PromptMode, RlEnv, TrainOutcome,
};
use crate::rng::{derive_seed, substream};
use crate::scorer::{extract_features, AttributeEncoder, FeatureScorer};
use crate::style::{
    style_finetune, style_prompt_tokens, supervised_finetune, target_tokens, FinetuneOutcome, Pair,
    Regime,
};

pub const SPLITS: &[&str] = &["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSplits {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl SceneSplits {
    pub fn get(&self, split: &str) -> Result<&[Scene]> {
        match split {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected one of {SPLITS:?})"
            ))),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Scene> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Where an adapter finetune starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneInit {
    Random,
    Rl,
}

impl FinetuneInit {
    pub fn name(self) -> &'static str {
        match self {
            FinetuneInit::Random => "random",
            FinetuneInit::Rl => "rl",
        }
    }
}

/// Ranking protocol results for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub checkpoint_hash: String,
    pub split: String,
    pub count: usize,
    pub mrr: f64,
    pub recall_at_1: f64,
    /// Per input id, the 1-based rank of the gold caption.
    pub gold_ranks: BTreeMap<u64, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_val_cosine: Option<f64>,
    pub best_val_cosine: Option<f64>,
    pub epochs_run: usize,
    pub batches_run: usize,
    pub stopped_early: bool,
    pub best_checkpoint_hash: String,
    pub backbone_fingerprint_before: Fingerprint,
    pub backbone_fingerprint_after: Fingerprint,
}

/// Everything a stage needs to build an [`RlEnv`] for one backbone.
pub struct RunAssets {
    pub vocab: Vocabulary,
    pub features: FeatureMap,
    pub encoder: AttributeEncoder,
    pub scorer: FeatureScorer<AttributeEncoder>,
    pub backbone: LanguageModel,
    pub scenes: SceneSplits,
    pub prompt: PromptMode,
    pub rewards: crate::rewards::RewardConfig,
    pub exec: crate::par::Exec,
}

impl RunAssets {
    pub fn env(&self) -> RlEnv<'_> {
        RlEnv {
            backbone: &self.backbone,
            vocab: &self.vocab,
            features: &self.features,
            scorer: &self.scorer,
            prompt: self.prompt.clone(),
            rewards: self.rewards.clone(),
            exec: self.exec,
        }
    }

    pub fn ids(&self, split: &str) -> Result<Vec<u64>> {
        Ok(self.scenes.get(split)?.iter().map(|s| s.scene_id).collect())
    }
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)
        .map_err(|e| Error::format(path, format!("{e} (has the producing stage run?)")))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

impl Experiment {
    /// Create (or reuse) the run directory and record the resolved config.
    pub fn create(cfg: ExperimentConfig, root: impl Into<PathBuf>) -> Result<Self> {
        cfg.check()?;
        let root = root.into();
        fs::create_dir_all(&root)?;
        cfg.save(&root.join("config.toml"))?;
        Ok(Self { cfg, root })
    }

    /// Open an existing run directory using its stored config.
    pub fn open(root: impl Into<PathBuf>, overrides: &[String]) -> Result<Self> {
        let root = root.into();
        let cfg = ExperimentConfig::load(&root.join("config.toml"), overrides)?;
        if !overrides.is_empty() {
            cfg.save(&root.join("config.toml"))?;
        }
        Ok(Self { cfg, root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn world(&self) -> Result<World> {
        World::by_name(&self.cfg.run.world)
    }

    fn seed(&self, name: &str) -> u64 {
        derive_seed(self.cfg.run.seed, name, &[])
    }

    pub fn encoder(&self) -> Result<AttributeEncoder> {
        AttributeEncoder::new(
            &self.world()?,
            self.cfg.data.feature_dim,
            self.seed("encoder"),
        )
    }

    // ---- gen-data ----

    pub fn gen_data(&self) -> Result<()> {
        let d = &self.cfg.data;
        let world = self.world()?;
        let all = world.generate_scenes(d.n_train + d.n_val + d.n_test, self.seed("scenes"), 0)?;
        let mut it = all.into_iter();
        let splits = SceneSplits {
            train: it.by_ref().take(d.n_train).collect(),
            val: it.by_ref().take(d.n_val).collect(),
            test: it.collect(),
        };
        fs::create_dir_all(self.path("data"))?;
        write_json(&self.path("data/scenes.json"), &splits)?;

        let lines: Vec<CorpusLine> = match &d.corpus_path {
            Some(p) => read_corpus(p)?,
            None => {
                let mut lines = Vec::new();
                for (i, style) in d.styles.iter().enumerate() {
                    let docs = world.style_corpus(
                        style,
                        &splits.train,
                        &d.template_set,
                        derive_seed(self.cfg.run.seed, "corpus", &[i as u64]),
                    )?;
                    // Free generation trains on untagged text.
                    lines.extend(docs.iter().map(|doc| CorpusLine {
                        style_tag: (!self.cfg.run.style.is_empty()).then(|| doc.style_tag.clone()),
                        body: doc.body.clone(),
                    }));
                }
                lines
            }
        };
        if lines.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        write_corpus(&self.path("data/corpus.txt"), &lines)?;
        let texts: Vec<String> = lines
            .iter()
            .map(|l| match &l.style_tag {
                Some(t) => format!("{} {}", style_prompt(t), l.body),
                None => l.body.clone(),
            })
            .collect();
        build_vocabulary(&texts, d.vocab_size)?.save(&self.path("data/vocab.json"))?;
        Ok(())
    }

    pub fn scenes(&self) -> Result<SceneSplits> {
        read_json(&self.path("data/scenes.json"))
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::load(&self.path("data/vocab.json"))
    }

    pub fn corpus(&self) -> Result<Vec<StyledDocument>> {
        Ok(read_corpus(&self.path("data/corpus.txt"))?
            .into_iter()
            .map(|l| StyledDocument {
                style_tag: l.style_tag.unwrap_or_default(),
                body: l.body,
            })
            .collect())
    }

    // ---- cache-features ----

    pub fn cache_features(&self) -> Result<()> {
        let features = match &self.cfg.data.features_path {
            Some(p) => load_feature_file(p)?,
            None => {
                let scenes = self.scenes()?;
                let all: Vec<Scene> = scenes.all().cloned().collect();
                extract_features(&self.encoder()?, &all)?
            }
        };
        write_feature_file(&self.path("data/features.espf"), &features)
    }

    pub fn features(&self) -> Result<FeatureMap> {
        load_feature_file(&self.path("data/features.espf"))
    }

    // ---- pretrain-style ----

    pub fn pretrain_style(&self) -> Result<Fingerprint> {
        let vocab = self.vocab()?;
        let docs = self.corpus()?;
        let lm = LanguageModel::new(self.lm_config(&vocab), self.seed("lm_init"))?;
        let out = style_finetune(
            lm,
            &vocab,
            &docs,
            &self.cfg.style_config(Regime::BackboneOnly),
            self.cfg.exec(),
        )?;
        out.backbone
            .to_archive()
            .write(&self.path("backbone.ckpt"))?;
        let fp = out.backbone.fingerprint();
        fs::write(self.path("backbone.fingerprint"), format!("{fp}\n"))?;
        write_json(&self.path("logs/style.json"), &out.epoch_nll)?;
        Ok(fp)
    }

    pub fn lm_config(&self, vocab: &Vocabulary) -> LmConfig {
        self.cfg.lm.to_config(vocab.len())
    }

    /// The backbone next to `checkpoint` when one was saved there (full
    /// finetunes), the run's pretrained backbone otherwise.
    pub fn backbone_for(&self, checkpoint: Option<&Path>) -> Result<LanguageModel> {
        let local = checkpoint
            .and_then(Path::parent)
            .map(|d| d.join("backbone.ckpt"))
            .filter(|p| p.exists());
        let path = local.unwrap_or_else(|| self.path("backbone.ckpt"));
        Ok(LanguageModel::from_archive(&Archive::read(&path)?)?.freeze())
    }

    // ---- train-rl ----

    /// Load data, features and the backbone (the one saved next to
    /// `checkpoint` if any, else the pretrained one).
    pub fn assets(&self, checkpoint: Option<&Path>) -> Result<RunAssets> {
        let vocab = self.vocab()?;
        let features = self.features()?;
        let encoder = self.encoder()?;
        Ok(RunAssets {
            prompt: self.prompt_mode(&vocab),
            scorer: FeatureScorer {
                encoder: encoder.clone(),
                features: features.clone(),
            },
            backbone: self.backbone_for(checkpoint)?,
            scenes: self.scenes()?,
            rewards: self.cfg.rewards.clone(),
            exec: self.cfg.exec(),
            vocab,
            features,
            encoder,
        })
    }

    pub fn prompt_mode(&self, vocab: &Vocabulary) -> PromptMode {
        if self.cfg.run.style.is_empty() {
            PromptMode::FrequencyStart
        } else {
            PromptMode::Fixed(style_prompt_tokens(vocab, &self.cfg.run.style))
        }
    }

    pub fn init_adapter(
        &self,
        features: &FeatureMap,
        backbone: &LanguageModel,
    ) -> Result<AdapterCheckpoint> {
        let mut ac = AdapterConfig::new(
            features.dim(),
            backbone.config().d_model,
            self.cfg.adapter.prefix_len,
        );
        if self.cfg.adapter.hidden > 0 {
            ac.d_hidden = self.cfg.adapter.hidden;
        }
        Ok(AdapterCheckpoint {
            policy: Adapter::new(ac, self.seed("adapter_init"))?,
            value: None,
            backbone_fingerprint: backbone.fingerprint(),
        })
    }

    pub fn load_checkpoint(path: &Path) -> Result<(AdapterCheckpoint, String)> {
        let a = Archive::read(path)?;
        Ok((AdapterCheckpoint::from_archive(&a)?, a.content_hash()))
    }

    pub fn best_checkpoint_path(&self) -> PathBuf {
        self.path("rl/adapter_best.ckpt")
    }

    pub fn train_rl(&self, init: Option<&Path>) -> Result<TrainOutcome> {
        let a = self.assets(None)?;
        let before = a.backbone.fingerprint();
        let start = match init {
            Some(p) => Self::load_checkpoint(p)?.0,
            None => self.init_adapter(&a.features, &a.backbone)?,
        };
        fs::create_dir_all(self.path("rl"))?;
        let mut log = MetricsLog::create(&self.path("rl/metrics.jsonl"))?;
        let out = train(
            &start,
            &self.cfg.ppo_config(),
            &a.env(),
            &a.ids("train")?,
            &a.ids("val")?,
            &mut log,
            Some(&self.path("rl")),
        )?;
        let best = out.best.to_archive();
        best.write(&self.best_checkpoint_path())?;
        out.last
            .to_archive()
            .write(&self.path("rl/adapter_last.ckpt"))?;
        write_json(
            &self.path("rl/summary.json"),
            &TrainSummary {
                initial_val_cosine: out.initial_val_cosine,
                best_val_cosine: out.best_val_cosine,
                epochs_run: out.epochs_run,
                batches_run: out.batches_run,
                stopped_early: out.stopped_early,
                best_checkpoint_hash: best.content_hash(),
                backbone_fingerprint_before: before,
                backbone_fingerprint_after: a.backbone.fingerprint(),
            },
        )?;
        Ok(out)
    }

    // ---- finetune ----

    /// (input id, caption) pairs built from each scene's caption-style text.
    pub fn caption_pairs(
        &self,
        scenes: &[Scene],
        vocab: &Vocabulary,
        stream: u64,
    ) -> Result<Vec<Pair>> {
        let docs = self.world()?.style_corpus(
            "caption",
            scenes,
            &self.cfg.data.template_set,
            derive_seed(self.cfg.run.seed, "pairs", &[stream]),
        )?;
        Ok(scenes
            .iter()
            .zip(docs)
            .map(|(s, d)| Pair {
                input_id: s.scene_id,
                target: target_tokens(vocab, &d.body),
            })
            .collect())
    }

    pub fn finetune_dir(&self, regime: Regime, init: FinetuneInit) -> PathBuf {
        let r = match regime {
            Regime::AdapterOnly => "mlp",
            Regime::Full => "full",
            Regime::BackboneOnly => "backbone",
        };
        self.path(&format!("finetune-{r}-{}", init.name()))
    }

    pub fn finetune(&self, regime: Regime, init: FinetuneInit) -> Result<FinetuneOutcome> {
        let vocab = self.vocab()?;
        let features = self.features()?;
        let backbone = self.backbone_for(None)?;
        let start = match init {
            FinetuneInit::Rl => Self::load_checkpoint(&self.best_checkpoint_path())?.0,
            FinetuneInit::Random => self.init_adapter(&features, &backbone)?,
        };
        let scenes = self.scenes()?;
        let train_pairs = self.caption_pairs(&scenes.train, &vocab, 0)?;
        let val_pairs = self.caption_pairs(&scenes.val, &vocab, 1)?;
        let prompt = style_prompt_tokens(&vocab, &self.cfg.run.style);
        let out = supervised_finetune(
            &start,
            backbone,
            &features,
            &prompt,
            &train_pairs,
            &val_pairs,
            &self.cfg.finetune_config(regime),
            self.cfg.exec(),
        )?;
        let dir = self.finetune_dir(regime, init);
        fs::create_dir_all(&dir)?;
        out.checkpoint
            .to_archive()
            .write(&dir.join("adapter.ckpt"))?;
        if regime == Regime::Full {
            out.backbone
                .to_archive()
                .write(&dir.join("backbone.ckpt"))?;
        }
        write_json(
            &dir.join("curve.json"),
            &serde_json::json!({ "val_nll": out.val_nll, "train_nll": out.train_nll }),
        )?;
        Ok(out)
    }

    // ---- generate / evaluate / rank ----

    fn resolve_checkpoint(&self, checkpoint: Option<&Path>) -> PathBuf {
        checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.best_checkpoint_path())
    }

    pub fn generate(&self, split: &str, checkpoint: Option<&Path>) -> Result<PathBuf> {
        let ckpt_path = self.resolve_checkpoint(checkpoint);
        let (ckpt, _) = Self::load_checkpoint(&ckpt_path)?;
        let a = self.assets(Some(&ckpt_path))?;
        ckpt.ensure_backbone(&a.backbone.fingerprint())?;
        let ids = a.ids(split)?;
        if ids.is_empty() {
            return Err(Error::EmptySplit);
        }
        let outs = greedy_outputs(
            &a.env(),
            &ckpt.policy,
            &ids,
            self.cfg.eval.max_tokens,
            self.seed("greedy"),
        )?;
        let mut tsv = String::new();
        for (id, (_, text)) in ids.iter().zip(outs) {
            tsv.push_str(&format!("{id}\t{text}\n"));
        }
        let path = self.path(&format!("generate/{split}.tsv"));
        fs::create_dir_all(self.path("generate"))?;
        fs::write(&path, tsv)?;
        Ok(path)
    }

    pub fn report_path(&self, split: &str) -> PathBuf {
        self.path(&format!("reports/eval-{split}.json"))
    }

    /// Evaluate without writing the report file.
    pub fn evaluate_report(&self, split: &str, checkpoint: Option<&Path>) -> Result<EvalReport> {
        let ckpt_path = self.resolve_checkpoint(checkpoint);
        let (ckpt, hash) = Self::load_checkpoint(&ckpt_path)?;
        let a = self.assets(Some(&ckpt_path))?;
        let split_scenes = a.scenes.get(split)?;
        let world = self.world()?;
        let e = &self.cfg.eval;
        let references: BTreeMap<u64, Vec<String>> = split_scenes
            .iter()
            .map(|s| (s.scene_id, world.reference_captions(s)))
            .collect();
        let best: BTreeMap<u64, f64> = if e.oracle {
            split_scenes
                .iter()
                .map(|s| {
                    Ok((
                        s.scene_id,
                        a.encoder.best_achievable_reward(s, e.oracle_max_words)?.0,
                    ))
                })
                .collect::<Result<_>>()?
        } else {
            BTreeMap::new()
        };
        let ids = a.ids(split)?;
        let inputs = EvalInputs {
            split,
            ids: &ids,
            references: Some(&references),
            best_achievable: Some(&best),
            max_tokens: e.max_tokens,
            seed: self.seed("greedy"),
        };
        let selection = MetricSelection {
            bleu4: e.bleu4,
            cider: e.cider && ids.len() >= 2,
            oracle: e.oracle,
        };
        evaluate_run(&a.env(), &ckpt, &hash, &inputs, selection)
    }

    pub fn evaluate(&self, split: &str, checkpoint: Option<&Path>) -> Result<EvalReport> {
        let report = self.evaluate_report(split, checkpoint)?;
        write_json(&self.report_path(split), &report)?;
        Ok(report)
    }

    pub fn rank(&self, split: &str, checkpoint: Option<&Path>) -> Result<RankReport> {
        let ckpt_path = self.resolve_checkpoint(checkpoint);
        let (ckpt, hash) = Self::load_checkpoint(&ckpt_path)?;
        let a = self.assets(Some(&ckpt_path))?;
        ckpt.ensure_backbone(&a.backbone.fingerprint())?;
        let split_scenes = a.scenes.get(split)?;
        if split_scenes.is_empty() {
            return Err(Error::EmptySplit);
        }
        let world = self.world()?;
        let question = style_prompt_tokens(&a.vocab, &self.cfg.run.style);
        let captions: Vec<String> = split_scenes
            .iter()
            .map(|s| world.reference_captions(s).remove(0))
            .collect();
        let tokens = |t: &str| target_tokens(&a.vocab, t);
        let mut gold_ranks = BTreeMap::new();
        for (i, scene) in split_scenes.iter().enumerate() {
            let mut rng = substream(self.cfg.run.seed, "rank", &[scene.scene_id]);
            let mut pool: Vec<usize> = (0..split_scenes.len())
                .filter(|&j| captions[j] != captions[i])
                .collect();
            pool.shuffle(&mut rng);
            pool.truncate(self.cfg.eval.rank_distractors);
            let gold = rng.gen_range(0..=pool.len());
            let mut cands: Vec<TokenSequence> =
                pool.iter().map(|&j| tokens(&captions[j])).collect();
            cands.insert(gold, tokens(&captions[i]));
            let prefix = ckpt.policy.encode(&a.features.get(scene.scene_id)?.0)?;
            let r = likelihood_rank(&a.backbone, &prefix, &question, &cands, Some(gold))?;
            gold_ranks.insert(scene.scene_id, r.gold_rank.expect("gold index is in range"));
        }
        let n = gold_ranks.len() as f64;
        let report = RankReport {
            checkpoint_hash: hash,
            split: split.to_string(),
            count: gold_ranks.len(),
            mrr: gold_ranks.values().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            recall_at_1: gold_ranks.values().filter(|&&r| r == 1).count() as f64 / n,
            gold_ranks,
        };
        write_json(&self.path(&format!("reports/rank-{split}.json")), &report)?;
        Ok(report)
    }

    // ---- plot ----

    pub fn plot(&self) -> Result<Vec<PathBuf>> {
        let records = read_metrics(&self.path("rl/metrics.jsonl"))?;
        crate::plot::training_curves(&records, &self.path("plots"))
    }
}
