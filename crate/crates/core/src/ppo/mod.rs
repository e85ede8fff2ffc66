//! Proximal policy optimization over adapter parameters.

pub mod gae;
pub mod loss;
pub mod metrics;
pub mod rollout;
pub mod trainer;
pub mod update;

pub use gae::{compute_gae, whiten};
pub use loss::{clip_terms, ppo_clip_loss, value_loss, ClipTerms};
pub use metrics::{read_metrics, replay, BatchRecord, MetricsLog, RewardStats, SampleRecord, Stat};
pub use rollout::{collect_rollouts, episode_rewards, Episode, PromptMode, RlEnv, RolloutBatch};
pub use trainer::{
    greedy_outputs, greedy_trigram_repetition, train, validation_cosine, TrainOutcome,
};
pub use update::{ppo_pass, PassGrads};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub ppo_epochs: usize,
    pub batch_size: usize,
    pub rollout_max_tokens: usize,
    pub learning_rate: f64,
    /// Linear decay of the learning rate to zero over the planned updates.
    pub linear_decay: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip per parameter group; 0 disables it.
    pub max_grad_norm: f64,
    pub max_epochs: usize,
    /// Stop after this many rollout batches in total; 0 means no cap.
    pub max_batches: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub sampling_temperature: f64,
    pub value_coef: f64,
    pub whiten_advantages: bool,
    /// Set from the experiment seed when run through a config.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            gae_lambda: 0.95,
            gamma: 1.0,
            ppo_epochs: 4,
            batch_size: 64,
            rollout_max_tokens: 20,
            learning_rate: 1e-5,
            linear_decay: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: 1.0,
            max_epochs: 50,
            max_batches: 0,
            patience: 5,
            sampling_temperature: 0.7,
            value_coef: 0.5,
            whiten_advantages: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            p.push(format!(
                "ppo.clip_epsilon: must be in (0, 1), got {}",
                self.clip_epsilon
            ));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            p.push(format!(
                "ppo.gae_lambda: must be in [0, 1], got {}",
                self.gae_lambda
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            p.push(format!("ppo.gamma: must be in (0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 {
            p.push("ppo.batch_size: must be at least 1".into());
        }
        if self.rollout_max_tokens == 0 {
            p.push("ppo.rollout_max_tokens: must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            p.push(format!(
                "ppo.learning_rate: must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.sampling_temperature > 0.0) {
            p.push(format!(
                "ppo.sampling_temperature: must be positive, got {}",
                self.sampling_temperature
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            p.push("ppo.adam_beta1/adam_beta2: must be in [0, 1)".into());
        }
        if self.patience == 0 {
            p.push("ppo.patience: must be at least 1".into());
        }
        p
    }
}
