#![allow(dead_code)]

pub mod oracles;

use esper_core::adapter::{Adapter, AdapterCheckpoint, AdapterConfig};
use esper_core::corpus::{build_vocabulary, FeatureMap, Scene, Vocabulary, World};
use esper_core::lm::{LanguageModel, LmConfig};
use esper_core::par::Exec;
use esper_core::ppo::{PromptMode, RlEnv};
use esper_core::rewards::RewardConfig;
use esper_core::scorer::{extract_features, AttributeEncoder, FeatureScorer};
use esper_core::style::style_prompt_tokens;

/// A small random backbone over a ShapeWorld caption vocabulary.
pub struct Tiny {
    pub world: World,
    pub vocab: Vocabulary,
    pub lm: LanguageModel,
    pub features: FeatureMap,
    pub scorer: FeatureScorer<AttributeEncoder>,
    pub scenes: Vec<Scene>,
}

pub fn tiny(seed: u64) -> Tiny {
    let world = World::shapeworld();
    let scenes = world.generate_scenes(24, seed, 0).unwrap();
    let docs = world
        .style_corpus("caption", &scenes, "default", seed)
        .unwrap();
    let texts: Vec<String> = docs.iter().map(|d| d.prompted_text()).collect();
    let vocab = build_vocabulary(&texts, 64).unwrap();
    let lm = LanguageModel::new(
        LmConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_len: 32,
        },
        seed,
    )
    .unwrap()
    .freeze();
    let enc = AttributeEncoder::new(&world, 16, seed + 1).unwrap();
    let features = extract_features(&enc, &scenes).unwrap();
    Tiny {
        world,
        vocab,
        lm,
        scorer: FeatureScorer {
            encoder: enc,
            features: features.clone(),
        },
        features,
        scenes,
    }
}

impl Tiny {
    pub fn env(&self, exec: Exec) -> RlEnv<'_> {
        RlEnv {
            backbone: &self.lm,
            vocab: &self.vocab,
            features: &self.features,
            scorer: &self.scorer,
            prompt: PromptMode::Fixed(style_prompt_tokens(&self.vocab, "caption")),
            rewards: RewardConfig::default(),
            exec,
        }
    }

    pub fn ids(&self) -> Vec<u64> {
        self.scenes.iter().map(|s| s.scene_id).collect()
    }

    pub fn checkpoint(&self, seed: u64) -> AdapterCheckpoint {
        AdapterCheckpoint {
            policy: Adapter::new(AdapterConfig::new(16, 16, 3), seed).unwrap(),
            value: None,
            backbone_fingerprint: self.lm.fingerprint(),
        }
    }
}
