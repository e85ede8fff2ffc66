//! Experiment configuration: TOML sections plus `section.key=value`
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{STYLES, WORLD_NAMES};
use crate::error::{Error, Result};
use crate::lm::LmConfig;
use crate::par::Exec;
use crate::ppo::PpoConfig;
use crate::rewards::RewardConfig;
use crate::style::{Regime, StyleTuneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl From<ExecMode> for Exec {
    fn from(m: ExecMode) -> Self {
        match m {
            ExecMode::Sequential => Exec::Sequential,
            ExecMode::Parallel => Exec::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub world: String,
    /// Style prompt used for RL and generation; empty selects free
    /// generation from a frequency-sampled start token.
    pub style: String,
    pub exec: ExecMode,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            world: "shapeworld".into(),
            style: "caption".into(),
            exec: ExecMode::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub styles: Vec<String>,
    pub template_set: String,
    /// Optional externally supplied corpus file; generated when absent.
    pub corpus_path: Option<PathBuf>,
    /// Optional externally supplied feature cache; computed when absent.
    pub features_path: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 100,
            n_test: 200,
            vocab_size: 200,
            feature_dim: 64,
            styles: vec!["caption".into(), "story".into()],
            template_set: "default".into(),
            corpus_path: None,
            features_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        let c = LmConfig::default();
        Self {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            max_len: c.max_len,
        }
    }
}

impl LmSection {
    pub fn to_config(&self, vocab_size: usize) -> LmConfig {
        LmConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub prefix_len: usize,
    /// 0 picks the mean of input and output widths.
    pub hidden: usize,
}

impl Default for AdapterSection {
    fn default() -> Self {
        Self {
            prefix_len: 10,
            hidden: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 1e-3,
            batch_size: 32,
            weight_decay: 0.0,
            max_grad_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub max_tokens: usize,
    pub bleu4: bool,
    pub cider: bool,
    pub oracle: bool,
    /// Longest attribute bag searched for the best achievable cosine.
    pub oracle_max_words: usize,
    /// Distractor captions per ranking instance.
    pub rank_distractors: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_tokens: 20,
            bleu4: true,
            cider: true,
            oracle: true,
            oracle_max_words: 6,
            rank_distractors: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub context_rate: f64,
}

impl Default for StyleSection {
    fn default() -> Self {
        let s = StyleTuneConfig::default();
        Self {
            epochs: s.epochs,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            weight_decay: s.weight_decay,
            max_grad_norm: s.max_grad_norm,
            context_rate: s.context_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub lm: LmSection,
    pub adapter: AdapterSection,
    pub rewards: RewardConfig,
    pub ppo: PpoConfig,
    pub style: StyleSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
}

fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text.split_once('=').ok_or_else(|| {
        Error::Config(vec![format!(
            "override `{text}`: expected section.key=value"
        )])
    })?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.len() < 2 || path.iter().any(String::is_empty) {
        return Err(Error::Config(vec![format!(
            "override `{text}`: key must look like section.key"
        )]));
    }
    let raw = raw.trim();
    // Anything that does not parse as a TOML value is taken as a string.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (head, rest) = path.split_first().expect("non-empty path");
    if rest.is_empty() {
        table.insert(head.clone(), value);
        return Ok(());
    }
    let entry = table
        .entry(head.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => apply(t, rest, value),
        _ => Err(Error::Config(vec![format!("{head}: is not a section")])),
    }
}

impl ExperimentConfig {
    /// Parse TOML text, apply overrides, and validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply(&mut table, &path, value)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let p = self.validate();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Field-level diagnostics; empty when the config is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !WORLD_NAMES.contains(&self.run.world.as_str()) {
            p.push(format!(
                "run.world: unknown world `{}` (expected one of {WORLD_NAMES:?})",
                self.run.world
            ));
        }
        if !self.run.style.is_empty() && !self.data.styles.contains(&self.run.style) {
            p.push(format!(
                "run.style: `{}` is not among data.styles",
                self.run.style
            ));
        }
        for s in &self.data.styles {
            if !STYLES.contains(&s.as_str()) {
                p.push(format!(
                    "data.styles: unknown style `{s}` (expected one of {STYLES:?})"
                ));
            }
        }
        if self.data.n_train == 0 {
            p.push("data.n_train: must be at least 1".into());
        }
        if self.data.vocab_size < 3 {
            p.push(format!(
                "data.vocab_size: must be at least 3, got {}",
                self.data.vocab_size
            ));
        }
        if self.data.feature_dim < 2 {
            p.push(format!(
                "data.feature_dim: must be at least 2, got {}",
                self.data.feature_dim
            ));
        }
        for (name, path) in [
            ("data.corpus_path", &self.data.corpus_path),
            ("data.features_path", &self.data.features_path),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    p.push(format!("{name}: {} does not exist", path.display()));
                }
            }
        }
        p.extend(
            self.lm
                .to_config(self.data.vocab_size)
                .validate()
                .into_iter()
                .map(|m| format!("lm: {m}")),
        );
        if self.adapter.prefix_len == 0 {
            p.push("adapter.prefix_len: must be at least 1".into());
        }
        if self.adapter.prefix_len + 2 + self.ppo.rollout_max_tokens > self.lm.max_len + 1 {
            p.push(format!(
                "lm.max_len: {} is too short for adapter.prefix_len + prompt + ppo.rollout_max_tokens",
                self.lm.max_len
            ));
        }
        p.extend(
            self.rewards
                .validate()
                .into_iter()
                .map(|m| format!("rewards: {m}")),
        );
        p.extend(self.ppo.validate());
        p.extend(self.style_config(Regime::BackboneOnly).validate());
        if self.finetune.batch_size == 0 {
            p.push("finetune.batch_size: must be at least 1".into());
        }
        if !(self.finetune.learning_rate > 0.0) {
            p.push(format!(
                "finetune.learning_rate: must be positive, got {}",
                self.finetune.learning_rate
            ));
        }
        if self.eval.max_tokens == 0 {
            p.push("eval.max_tokens: must be at least 1".into());
        }
        p
    }

    pub fn exec(&self) -> Exec {
        self.run.exec.into()
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            seed: crate::rng::derive_seed(self.run.seed, "ppo", &[]),
            ..self.ppo.clone()
        }
    }

    pub fn style_config(&self, regime: Regime) -> StyleTuneConfig {
        StyleTuneConfig {
            styles: self.data.styles.clone(),
            epochs: self.style.epochs,
            learning_rate: self.style.learning_rate,
            batch_size: self.style.batch_size,
            weight_decay: self.style.weight_decay,
            max_grad_norm: self.style.max_grad_norm,
            regime,
            prefix_len: self.adapter.prefix_len,
            context_rate: self.style.context_rate,
            seed: crate::rng::derive_seed(self.run.seed, "style", &[]),
        }
    }

    pub fn finetune_config(&self, regime: Regime) -> StyleTuneConfig {
        StyleTuneConfig {
            epochs: self.finetune.epochs,
            learning_rate: self.finetune.learning_rate,
            batch_size: self.finetune.batch_size,
            weight_decay: self.finetune.weight_decay,
            max_grad_norm: self.finetune.max_grad_norm,
            context_rate: 0.0,
            seed: crate::rng::derive_seed(self.run.seed, "finetune", &[]),
            ..self.style_config(regime)
        }
    }
}
