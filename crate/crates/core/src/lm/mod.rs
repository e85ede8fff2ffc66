//! Autoregressive language model with prefix-embedding conditioning.

pub mod decode;
pub mod model;

pub use decode::{greedy_decode, sample, sample_start_token, Sampled};
pub use model::{Decoder, LanguageModel, LmConfig, LmForward, PrefixEmbedding};

use crate::checkpoint::Archive;
use crate::error::{Error, Result};

impl LanguageModel {
    pub fn to_archive(&self) -> Archive {
        let c = self.config();
        let mut a = Archive::new()
            .with_meta("kind", "backbone")
            .with_meta("fingerprint", self.fingerprint().0)
            .with_meta("lm.vocab_size", c.vocab_size.to_string())
            .with_meta("lm.d_model", c.d_model.to_string())
            .with_meta("lm.n_layers", c.n_layers.to_string())
            .with_meta("lm.n_heads", c.n_heads.to_string())
            .with_meta("lm.max_len", c.max_len.to_string());
        a.extend(self.params().to_tensors("lm"));
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            a.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("backbone archive lacks {k}")))
        };
        let cfg = LmConfig {
            vocab_size: get("lm.vocab_size")?,
            d_model: get("lm.d_model")?,
            n_layers: get("lm.n_layers")?,
            n_heads: get("lm.n_heads")?,
            max_len: get("lm.max_len")?,
        };
        let mut lm = LanguageModel::new(cfg, 0)?;
        lm.params_mut().load_tensors("lm", &a.tensors)?;
        if let Some(fp) = a.meta("fingerprint") {
            let found = lm.fingerprint();
            if found.0 != fp {
                return Err(Error::FingerprintMismatch {
                    expected: fp.to_string(),
                    found: found.0,
                });
            }
        }
        Ok(lm)
    }
}
