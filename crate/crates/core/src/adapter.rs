//! The trainable part of the policy: a two-layer tanh MLP mapping a modality
//! feature to `k` prefix rows, and the scalar value head used by PPO.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::lm::PrefixEmbedding;
use crate::params::{Fingerprint, ParamStore};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub d_feature: usize,
    pub d_model: usize,
    pub prefix_len: usize,
    pub d_hidden: usize,
}

impl AdapterConfig {
    /// Hidden width defaults to the mean of the input and output widths.
    pub fn new(d_feature: usize, d_model: usize, prefix_len: usize) -> Self {
        Self {
            d_feature,
            d_model,
            prefix_len,
            d_hidden: (d_feature + prefix_len * d_model) / 2,
        }
    }

    pub fn d_out(&self) -> usize {
        self.prefix_len * self.d_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    cfg: AdapterConfig,
    params: ParamStore,
}

/// Intermediate values of [`Adapter::encode_cached`].
#[derive(Debug, Clone)]
pub struct AdapterCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

impl Adapter {
    pub fn new(cfg: AdapterConfig, seed: u64) -> Result<Self> {
        if cfg.d_feature == 0 || cfg.d_model == 0 || cfg.prefix_len == 0 || cfg.d_hidden == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate adapter shape {cfg:?}"
            )));
        }
        let mut params = ParamStore::new();
        let w1 = params.add("layer1.w", &[cfg.d_hidden, cfg.d_feature]);
        params.add("layer1.b", &[cfg.d_hidden]);
        let w2 = params.add("layer2.w", &[cfg.d_out(), cfg.d_hidden]);
        params.add("layer2.b", &[cfg.d_out()]);
        let mut rng = substream(seed, "adapter_init", &[]);
        let b1 = 1.0 / (cfg.d_feature as f64).sqrt();
        let b2 = 1.0 / (cfg.d_hidden as f64).sqrt();
        let data = params.data_mut();
        for x in &mut data[w1] {
            *x = rng.gen_range(-b1..b1);
        }
        for x in &mut data[w2] {
            *x = rng.gen_range(-b2..b2);
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.params.fingerprint()
    }

    pub fn encode(&self, feature: &[f32]) -> Result<PrefixEmbedding> {
        Ok(self.encode_cached(feature)?.0)
    }

    /// `layer2(tanh(layer1(feature)))` reshaped to `k × d_model`.
    pub fn encode_cached(&self, feature: &[f32]) -> Result<(PrefixEmbedding, AdapterCache)> {
        let c = &self.cfg;
        if feature.len() != c.d_feature {
            return Err(Error::DimensionMismatch {
                expected: c.d_feature,
                found: feature.len(),
            });
        }
        let input: Vec<f64> = feature.iter().map(|&x| x as f64).collect();
        let mut hidden = vec![0.0; c.d_hidden];
        crate::kernels::linear_forward(
            &mut hidden,
            &input,
            self.params.get("layer1.w"),
            Some(self.params.get("layer1.b")),
            1,
            c.d_feature,
            c.d_hidden,
        );
        for h in &mut hidden {
            *h = h.tanh();
        }
        let mut out = vec![0.0; c.d_out()];
        crate::kernels::linear_forward(
            &mut out,
            &hidden,
            self.params.get("layer2.w"),
            Some(self.params.get("layer2.b")),
            1,
            c.d_hidden,
            c.d_out(),
        );
        Ok((
            PrefixEmbedding::from_vec(c.prefix_len, c.d_model, out)?,
            AdapterCache { input, hidden },
        ))
    }

    /// Accumulate parameter gradients given the gradient on the prefix rows.
    pub fn backward(&self, cache: &AdapterCache, dprefix: &[f64], grads: &mut [f64]) {
        let c = &self.cfg;
        assert_eq!(dprefix.len(), c.d_out());
        assert_eq!(grads.len(), self.params.len());
        let r = |n: &str| self.params.spec(n).unwrap().range();
        let (w1, b1, w2, b2) = (r("layer1.w"), r("layer1.b"), r("layer2.w"), r("layer2.b"));
        let mut dhidden = vec![0.0; c.d_hidden];
        {
            let (lo, hi) = grads.split_at_mut(b2.start);
            crate::kernels::linear_backward(
                Some(&mut dhidden),
                Some(&mut lo[w2]),
                Some(&mut hi[..b2.len()]),
                dprefix,
                &cache.hidden,
                self.params.get("layer2.w"),
                1,
                c.d_hidden,
                c.d_out(),
            );
        }
        for (dh, h) in dhidden.iter_mut().zip(&cache.hidden) {
            *dh *= 1.0 - h * h;
        }
        let (lo, hi) = grads.split_at_mut(b1.start);
        crate::kernels::linear_backward(
            None,
            Some(&mut lo[w1]),
            Some(&mut hi[..b1.len()]),
            &dhidden,
            &cache.input,
            self.params.get("layer1.w"),
            1,
            c.d_feature,
            c.d_hidden,
        );
    }
}

/// Linear read-out of a scalar value from final hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueHead {
    d_model: usize,
    params: ParamStore,
}

impl ValueHead {
    /// Zero weights and bias, so the initial value estimate is 0 everywhere.
    pub fn new(d_model: usize) -> Self {
        let mut params = ParamStore::new();
        params.add("w", &[d_model]);
        params.add("b", &[1]);
        Self { d_model, params }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// One value per `d_model` row of `hidden`.
    pub fn value(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        if hidden.is_empty() || !hidden.len().is_multiple_of(self.d_model) {
            return Err(Error::DimensionMismatch {
                expected: self.d_model,
                found: hidden.len(),
            });
        }
        let w = self.params.get("w");
        let b = self.params.get("b")[0];
        Ok(hidden
            .chunks_exact(self.d_model)
            .map(|h| b + h.iter().zip(w).map(|(x, y)| x * y).sum::<f64>())
            .collect())
    }

    /// Accumulate parameter gradients; returns the gradient on `hidden`.
    pub fn backward(&self, hidden: &[f64], dvalues: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let d = self.d_model;
        let w = self.params.get("w");
        let mut dh = vec![0.0; hidden.len()];
        for ((h, dv), dhr) in hidden
            .chunks_exact(d)
            .zip(dvalues)
            .zip(dh.chunks_exact_mut(d))
        {
            for j in 0..d {
                grads[j] += dv * h[j];
                dhr[j] = dv * w[j];
            }
            grads[d] += dv;
        }
        dh
    }
}

/// Value model: its own adapter copy plus a value head, sharing the frozen
/// backbone with the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub adapter: Adapter,
    pub head: ValueHead,
}

impl ValueModel {
    /// Clone the policy adapter and attach a zero-initialized head.
    pub fn from_policy(policy: &Adapter) -> Self {
        Self {
            adapter: policy.clone(),
            head: ValueHead::new(policy.config().d_model),
        }
    }
}

/// What an adapter checkpoint file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterCheckpoint {
    pub policy: Adapter,
    pub value: Option<ValueModel>,
    pub backbone_fingerprint: Fingerprint,
}

impl AdapterCheckpoint {
    pub fn to_archive(&self) -> Archive {
        let c = self.policy.config();
        let mut a = Archive::new()
            .with_meta("kind", "adapter")
            .with_meta("backbone_fingerprint", self.backbone_fingerprint.0.clone())
            .with_meta("adapter.d_feature", c.d_feature.to_string())
            .with_meta("adapter.d_model", c.d_model.to_string())
            .with_meta("adapter.prefix_len", c.prefix_len.to_string())
            .with_meta("adapter.d_hidden", c.d_hidden.to_string());
        a.extend(self.policy.params.to_tensors("policy"));
        if let Some(v) = &self.value {
            a.extend(v.adapter.params.to_tensors("value_adapter"));
            a.extend(v.head.params.to_tensors("value_head"));
        }
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let get = |k: &str| -> Result<usize> {
            a.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("adapter archive lacks {k}")))
        };
        let cfg = AdapterConfig {
            d_feature: get("adapter.d_feature")?,
            d_model: get("adapter.d_model")?,
            prefix_len: get("adapter.prefix_len")?,
            d_hidden: get("adapter.d_hidden")?,
        };
        let fp = a.meta("backbone_fingerprint").ok_or_else(|| {
            Error::InvalidArgument("adapter archive lacks backbone_fingerprint".into())
        })?;
        let mut policy = Adapter::new(cfg, 0)?;
        policy.params.load_tensors("policy", &a.tensors)?;
        let value = if a.tensors.iter().any(|t| t.name.starts_with("value_head.")) {
            let mut v = ValueModel::from_policy(&policy);
            v.adapter.params.load_tensors("value_adapter", &a.tensors)?;
            v.head.params.load_tensors("value_head", &a.tensors)?;
            Some(v)
        } else {
            None
        };
        Ok(Self {
            policy,
            value,
            backbone_fingerprint: Fingerprint(fp.to_string()),
        })
    }

    pub fn ensure_backbone(&self, found: &Fingerprint) -> Result<()> {
        if &self.backbone_fingerprint != found {
            return Err(Error::FingerprintMismatch {
                expected: self.backbone_fingerprint.0.clone(),
                found: found.0.clone(),
            });
        }
        Ok(())
    }
}
