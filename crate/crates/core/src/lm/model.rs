//! A small GPT-style decoder (pre-LN, learned positions, tied output
//! embedding) that accepts real-valued prefix rows ahead of its tokens.

use std::ops::Range;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::kernels::*;
use crate::params::{Fingerprint, ParamStore};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Positions available to prefix slots and tokens together.
    pub max_len: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 64,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = vec![];
        if self.vocab_size < 3 {
            errs.push("lm.vocab_size: must be at least 3".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            errs.push(format!(
                "lm.d_model: {} must be a positive multiple of lm.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            errs.push("lm.n_layers: must be at least 1".into());
        }
        if self.max_len < 2 {
            errs.push("lm.max_len: must be at least 2".into());
        }
        errs
    }
}

/// The k × d_model matrix of prefix rows (the multimodal prompt).
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixEmbedding {
    pub rows: usize,
    pub d_model: usize,
    pub data: Vec<f64>,
}

impl PrefixEmbedding {
    pub fn zeros(rows: usize, d_model: usize) -> Self {
        Self {
            rows,
            d_model,
            data: vec![0.0; rows * d_model],
        }
    }

    pub fn from_vec(rows: usize, d_model: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * d_model {
            return Err(Error::DimensionMismatch {
                expected: rows * d_model,
                found: data.len(),
            });
        }
        Ok(Self {
            rows,
            d_model,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d_model..(i + 1) * self.d_model]
    }
}

#[derive(Debug, Clone)]
struct LayerIdx {
    ln1_w: Range<usize>,
    ln1_b: Range<usize>,
    qkv_w: Range<usize>,
    qkv_b: Range<usize>,
    proj_w: Range<usize>,
    proj_b: Range<usize>,
    ln2_w: Range<usize>,
    ln2_b: Range<usize>,
    fc_w: Range<usize>,
    fc_b: Range<usize>,
    fcproj_w: Range<usize>,
    fcproj_b: Range<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    wte: Range<usize>,
    wpe: Range<usize>,
    layers: Vec<LayerIdx>,
    lnf_w: Range<usize>,
    lnf_b: Range<usize>,
}

/// Backbone parameters plus the frozen flag (the "LM state").
#[derive(Debug, Clone)]
pub struct LanguageModel {
    cfg: LmConfig,
    params: ParamStore,
    layout: Layout,
}

#[derive(Debug, Clone)]
struct LayerActs {
    ln1: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    qkv: Vec<f64>,
    att: Vec<f64>,
    atty: Vec<f64>,
    res2: Vec<f64>,
    ln2: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    fch: Vec<f64>,
    fch_gelu: Vec<f64>,
    out: Vec<f64>,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LmForward {
    n_prefix: usize,
    tokens: Vec<TokenId>,
    encoded: Vec<f64>,
    layers: Vec<LayerActs>,
    lnf: Vec<f64>,
    lnf_mean: Vec<f64>,
    lnf_rstd: Vec<f64>,
    /// Positions whose logits were computed.
    pub rows: Range<usize>,
    /// `rows.len() × vocab_size` logits.
    pub logits: Vec<f64>,
}

impl LmForward {
    pub fn len(&self) -> usize {
        self.n_prefix + self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Final-layer-norm output for the logit rows, `rows.len() × d_model`.
    pub fn hidden_rows(&self, d: usize) -> &[f64] {
        &self.lnf[self.rows.start * d..self.rows.end * d]
    }
}

impl LanguageModel {
    /// GPT-2 style initialization: N(0, 0.02) weights, residual projections
    /// scaled by 1/sqrt(2·n_layers), unit layer-norm gains.
    pub fn new(cfg: LmConfig, seed: u64) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let (v, d, l) = (cfg.vocab_size, cfg.d_model, cfg.n_layers);
        let mut p = ParamStore::new();
        let wte = p.add("wte", &[v, d]);
        let wpe = p.add("wpe", &[cfg.max_len, d]);
        let mut layers = Vec::with_capacity(l);
        for i in 0..l {
            layers.push(LayerIdx {
                ln1_w: p.add(format!("h{i}.ln1.w"), &[d]),
                ln1_b: p.add(format!("h{i}.ln1.b"), &[d]),
                qkv_w: p.add(format!("h{i}.attn.qkv.w"), &[3 * d, d]),
                qkv_b: p.add(format!("h{i}.attn.qkv.b"), &[3 * d]),
                proj_w: p.add(format!("h{i}.attn.proj.w"), &[d, d]),
                proj_b: p.add(format!("h{i}.attn.proj.b"), &[d]),
                ln2_w: p.add(format!("h{i}.ln2.w"), &[d]),
                ln2_b: p.add(format!("h{i}.ln2.b"), &[d]),
                fc_w: p.add(format!("h{i}.mlp.fc.w"), &[4 * d, d]),
                fc_b: p.add(format!("h{i}.mlp.fc.b"), &[4 * d]),
                fcproj_w: p.add(format!("h{i}.mlp.proj.w"), &[d, 4 * d]),
                fcproj_b: p.add(format!("h{i}.mlp.proj.b"), &[d]),
            });
        }
        let lnf_w = p.add("lnf.w", &[d]);
        let lnf_b = p.add("lnf.b", &[d]);
        let layout = Layout {
            wte,
            wpe,
            layers,
            lnf_w,
            lnf_b,
        };

        let mut rng = substream(seed, "lm_init", &[]);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let resid_scale = 1.0 / ((2 * l) as f64).sqrt();
        let data = p.data_mut();
        let mut fill = |r: &Range<usize>, scale: f64, rng: &mut crate::rng::StreamRng| {
            for x in &mut data[r.clone()] {
                *x = normal.sample(rng) * scale;
            }
        };
        fill(&layout.wte, 1.0, &mut rng);
        fill(&layout.wpe, 0.5, &mut rng);
        for li in &layout.layers {
            fill(&li.qkv_w, 1.0, &mut rng);
            fill(&li.proj_w, resid_scale, &mut rng);
            fill(&li.fc_w, 1.0, &mut rng);
            fill(&li.fcproj_w, resid_scale, &mut rng);
        }
        for li in &layout.layers {
            data[li.ln1_w.clone()].fill(1.0);
            data[li.ln2_w.clone()].fill(1.0);
        }
        data[layout.lnf_w.clone()].fill(1.0);
        Ok(Self {
            cfg,
            params: p,
            layout,
        })
    }

    pub fn config(&self) -> &LmConfig {
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

    /// Mark the parameters frozen: optimizer steps leave them untouched.
    pub fn freeze(mut self) -> Self {
        self.params.set_frozen(true);
        self
    }

    pub fn unfreeze(mut self) -> Self {
        self.params.set_frozen(false);
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.params.is_frozen()
    }

    fn w(&self, r: &Range<usize>) -> &[f64] {
        &self.params.data()[r.clone()]
    }

    /// Prefix rows holding the input embeddings of `tokens`, zero-padded to
    /// `rows`.
    pub fn embed_as_prefix(&self, tokens: &[TokenId], rows: usize) -> Result<PrefixEmbedding> {
        self.check_tokens(tokens)?;
        if tokens.len() > rows {
            return Err(Error::LengthOverflow {
                len: tokens.len(),
                max_len: rows,
            });
        }
        let d = self.cfg.d_model;
        let mut p = PrefixEmbedding::zeros(rows, d);
        for (i, &t) in tokens.iter().enumerate() {
            p.data[i * d..(i + 1) * d]
                .copy_from_slice(&self.wte()[t as usize * d..(t as usize + 1) * d]);
        }
        Ok(p)
    }

    pub(crate) fn wte(&self) -> &[f64] {
        self.w(&self.layout.wte)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n > self.cfg.max_len {
            return Err(Error::LengthOverflow {
                len: n,
                max_len: self.cfg.max_len,
            });
        }
        Ok(())
    }

    fn check_prefix(&self, prefix: &PrefixEmbedding) -> Result<()> {
        if prefix.d_model != self.cfg.d_model || prefix.data.len() != prefix.rows * prefix.d_model {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.d_model,
                found: prefix.d_model,
            });
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {t} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Full forward pass over `prefix` rows followed by `tokens`; logits are
    /// produced for positions `rows`.
    pub fn forward(
        &self,
        prefix: &PrefixEmbedding,
        tokens: &[TokenId],
        rows: Range<usize>,
    ) -> Result<LmForward> {
        self.check_prefix(prefix)?;
        self.check_tokens(tokens)?;
        let d = self.cfg.d_model;
        let nh = self.cfg.n_heads;
        let np = prefix.rows;
        let t = np + tokens.len();
        self.check_len(t)?;
        if rows.end > t || rows.start > rows.end {
            return Err(Error::InvalidArgument(format!(
                "logit rows {rows:?} outside 0..{t}"
            )));
        }
        let wte = self.wte();
        let wpe = self.w(&self.layout.wpe);
        let mut encoded = vec![0.0; t * d];
        for p in 0..t {
            let src = if p < np {
                prefix.row(p)
            } else {
                let tok = tokens[p - np] as usize;
                &wte[tok * d..(tok + 1) * d]
            };
            let pos = &wpe[p * d..(p + 1) * d];
            for ((o, a), b) in encoded[p * d..(p + 1) * d].iter_mut().zip(src).zip(pos) {
                *o = a + b;
            }
        }

        let mut layers: Vec<LayerActs> = Vec::with_capacity(self.cfg.n_layers);
        for li in &self.layout.layers {
            let x = layers.last().map(|a| a.out.as_slice()).unwrap_or(&encoded);
            let mut a = LayerActs {
                ln1: vec![0.0; t * d],
                ln1_mean: vec![0.0; t],
                ln1_rstd: vec![0.0; t],
                qkv: vec![0.0; t * 3 * d],
                att: vec![0.0; nh * t * t],
                atty: vec![0.0; t * d],
                res2: vec![0.0; t * d],
                ln2: vec![0.0; t * d],
                ln2_mean: vec![0.0; t],
                ln2_rstd: vec![0.0; t],
                fch: vec![0.0; t * 4 * d],
                fch_gelu: vec![0.0; t * 4 * d],
                out: vec![0.0; t * d],
            };
            layernorm_forward(
                &mut a.ln1,
                &mut a.ln1_mean,
                &mut a.ln1_rstd,
                x,
                self.w(&li.ln1_w),
                self.w(&li.ln1_b),
                d,
            );
            linear_forward(
                &mut a.qkv,
                &a.ln1,
                self.w(&li.qkv_w),
                Some(self.w(&li.qkv_b)),
                t,
                d,
                3 * d,
            );
            attention_forward(&mut a.atty, &mut a.att, &a.qkv, t, d, nh);
            linear_forward(
                &mut a.res2,
                &a.atty,
                self.w(&li.proj_w),
                Some(self.w(&li.proj_b)),
                t,
                d,
                d,
            );
            for (r, xi) in a.res2.iter_mut().zip(x) {
                *r += xi;
            }
            layernorm_forward(
                &mut a.ln2,
                &mut a.ln2_mean,
                &mut a.ln2_rstd,
                &a.res2,
                self.w(&li.ln2_w),
                self.w(&li.ln2_b),
                d,
            );
            linear_forward(
                &mut a.fch,
                &a.ln2,
                self.w(&li.fc_w),
                Some(self.w(&li.fc_b)),
                t,
                d,
                4 * d,
            );
            gelu_forward(&mut a.fch_gelu, &a.fch);
            linear_forward(
                &mut a.out,
                &a.fch_gelu,
                self.w(&li.fcproj_w),
                Some(self.w(&li.fcproj_b)),
                t,
                4 * d,
                d,
            );
            for (o, r) in a.out.iter_mut().zip(&a.res2) {
                *o += r;
            }
            layers.push(a);
        }
        let last = layers.last().map(|a| a.out.as_slice()).unwrap_or(&encoded);
        let mut lnf = vec![0.0; t * d];
        let mut lnf_mean = vec![0.0; t];
        let mut lnf_rstd = vec![0.0; t];
        layernorm_forward(
            &mut lnf,
            &mut lnf_mean,
            &mut lnf_rstd,
            last,
            self.w(&self.layout.lnf_w),
            self.w(&self.layout.lnf_b),
            d,
        );

        let n = rows.len();
        let v = self.cfg.vocab_size;
        let mut logits = vec![0.0; n * v];
        linear_forward(
            &mut logits,
            &lnf[rows.start * d..rows.end * d],
            wte,
            None,
            n,
            d,
            v,
        );
        Ok(LmForward {
            n_prefix: np,
            tokens: tokens.to_vec(),
            encoded,
            layers,
            lnf,
            lnf_mean,
            lnf_rstd,
            rows,
            logits,
        })
    }

    /// Backward pass from gradients on the logit rows (`dlogits`) and/or on the
    /// final hidden states of those rows (`dhidden`). Parameter gradients are
    /// accumulated into `grads` when given. Returns the gradient with respect
    /// to the prefix rows.
    pub fn backward(
        &self,
        fwd: &LmForward,
        dlogits: Option<&[f64]>,
        dhidden: Option<&[f64]>,
        mut grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let d = self.cfg.d_model;
        let nh = self.cfg.n_heads;
        let v = self.cfg.vocab_size;
        let t = fwd.len();
        let rows = fwd.rows.clone();
        let n = rows.len();
        if let Some(g) = grads.as_deref() {
            assert_eq!(g.len(), self.params.len());
        }

        let mut dlnf = vec![0.0; t * d];
        if let Some(dl) = dlogits {
            assert_eq!(dl.len(), n * v);
            let lnf_rows = &fwd.lnf[rows.start * d..rows.end * d];
            let dwte = grads
                .as_deref_mut()
                .map(|g| &mut g[self.layout.wte.clone()]);
            linear_backward(
                Some(&mut dlnf[rows.start * d..rows.end * d]),
                dwte,
                None,
                dl,
                lnf_rows,
                self.wte(),
                n,
                d,
                v,
            );
        }
        if let Some(dh) = dhidden {
            assert_eq!(dh.len(), n * d);
            for (a, b) in dlnf[rows.start * d..rows.end * d].iter_mut().zip(dh) {
                *a += b;
            }
        }

        let mut dres = vec![0.0; t * d];
        {
            let last = fwd
                .layers
                .last()
                .map(|a| a.out.as_slice())
                .unwrap_or(&fwd.encoded);
            let (dw, db) = split_pair(grads.as_deref_mut(), &self.layout.lnf_w, &self.layout.lnf_b);
            layernorm_backward(
                &mut dres,
                dw,
                db,
                &dlnf,
                last,
                self.w(&self.layout.lnf_w),
                &fwd.lnf_mean,
                &fwd.lnf_rstd,
                d,
            );
        }

        for (l, li) in self.layout.layers.iter().enumerate().rev() {
            let a = &fwd.layers[l];
            let x = if l == 0 {
                fwd.encoded.as_slice()
            } else {
                fwd.layers[l - 1].out.as_slice()
            };

            // MLP branch: out = res2 + fcproj(gelu(fc(ln2(res2)))).
            let mut dres2 = dres.clone();
            let mut dfch_gelu = vec![0.0; t * 4 * d];
            {
                let (dw, db) = split_pair(grads.as_deref_mut(), &li.fcproj_w, &li.fcproj_b);
                linear_backward(
                    Some(&mut dfch_gelu),
                    dw,
                    db,
                    &dres,
                    &a.fch_gelu,
                    self.w(&li.fcproj_w),
                    t,
                    4 * d,
                    d,
                );
            }
            let mut dfch = vec![0.0; t * 4 * d];
            gelu_backward(&mut dfch, &a.fch, &dfch_gelu);
            let mut dln2 = vec![0.0; t * d];
            {
                let (dw, db) = split_pair(grads.as_deref_mut(), &li.fc_w, &li.fc_b);
                linear_backward(
                    Some(&mut dln2),
                    dw,
                    db,
                    &dfch,
                    &a.ln2,
                    self.w(&li.fc_w),
                    t,
                    d,
                    4 * d,
                );
            }
            {
                let (dw, db) = split_pair(grads.as_deref_mut(), &li.ln2_w, &li.ln2_b);
                layernorm_backward(
                    &mut dres2,
                    dw,
                    db,
                    &dln2,
                    &a.res2,
                    self.w(&li.ln2_w),
                    &a.ln2_mean,
                    &a.ln2_rstd,
                    d,
                );
            }

            // Attention branch: res2 = x + proj(attn(qkv(ln1(x)))).
            let mut dx = dres2.clone();
            let mut datty = vec![0.0; t * d];
            {
                let (dw, db) = split_pair(grads.as_deref_mut(), &li.proj_w, &li.proj_b);
                linear_backward(
                    Some(&mut datty),
                    dw,
                    db,
                    &dres2,
                    &a.atty,
                    self.w(&li.proj_w),
                    t,
                    d,
                    d,
                );
            }
            let mut dqkv = vec![0.0; t * 3 * d];
            attention_backward(&mut dqkv, &datty, &a.qkv, &a.att, t, d, nh);
            let mut dln1 = vec![0.0; t * d];
            {
                let (dw, db) = split_pair(grads.as_deref_mut(), &li.qkv_w, &li.qkv_b);
                linear_backward(
                    Some(&mut dln1),
                    dw,
                    db,
                    &dqkv,
                    &a.ln1,
                    self.w(&li.qkv_w),
                    t,
                    d,
                    3 * d,
                );
            }
            {
                let (dw, db) = split_pair(grads.as_deref_mut(), &li.ln1_w, &li.ln1_b);
                layernorm_backward(
                    &mut dx,
                    dw,
                    db,
                    &dln1,
                    x,
                    self.w(&li.ln1_w),
                    &a.ln1_mean,
                    &a.ln1_rstd,
                    d,
                );
            }
            dres = dx;
        }

        if let Some(g) = grads {
            let np = fwd.n_prefix;
            for p in 0..t {
                let row = &dres[p * d..(p + 1) * d];
                let wpe_off = self.layout.wpe.start + p * d;
                for (gg, r) in g[wpe_off..wpe_off + d].iter_mut().zip(row) {
                    *gg += r;
                }
                if p >= np {
                    let tok = fwd.tokens[p - np] as usize;
                    let off = self.layout.wte.start + tok * d;
                    for (gg, r) in g[off..off + d].iter_mut().zip(row) {
                        *gg += r;
                    }
                }
            }
        }
        dres.truncate(fwd.n_prefix * d);
        dres
    }

    /// Per-token log-probabilities of `continuation` given the prefix rows and
    /// the prompt tokens (temperature 1).
    pub fn log_probs(
        &self,
        prefix: &PrefixEmbedding,
        prompt: &[TokenId],
        continuation: &[TokenId],
    ) -> Result<Vec<f64>> {
        Ok(self.score_continuation(prefix, prompt, continuation)?.1)
    }

    /// Forward pass set up for scoring `continuation`: logit rows are the
    /// positions that predict each continuation token.
    pub fn score_continuation(
        &self,
        prefix: &PrefixEmbedding,
        prompt: &[TokenId],
        continuation: &[TokenId],
    ) -> Result<(LmForward, Vec<f64>)> {
        let start = prefix.rows + prompt.len();
        if start == 0 && !continuation.is_empty() {
            return Err(Error::InvalidArgument(
                "first token has no context: empty prefix and prompt".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(prompt.len() + continuation.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(continuation);
        let total = prefix.rows + tokens.len();
        self.check_len(total)?;
        let rows = if continuation.is_empty() {
            start..start
        } else {
            start - 1..total - 1
        };
        // The final token is never used as context.
        let fwd = self.forward(
            prefix,
            &tokens[..tokens
                .len()
                .saturating_sub(usize::from(!continuation.is_empty()))],
            rows,
        )?;
        let v = self.cfg.vocab_size;
        let lps = continuation
            .iter()
            .enumerate()
            .map(|(j, &tok)| {
                let lp = log_softmax(&fwd.logits[j * v..(j + 1) * v]);
                lp[tok as usize]
            })
            .collect();
        Ok((fwd, lps))
    }
}

fn split_pair<'a>(
    grads: Option<&'a mut [f64]>,
    w: &Range<usize>,
    b: &Range<usize>,
) -> (Option<&'a mut [f64]>, Option<&'a mut [f64]>) {
    match grads {
        None => (None, None),
        Some(g) => {
            debug_assert!(w.end <= b.start);
            let (lo, hi) = g.split_at_mut(b.start);
            (Some(&mut lo[w.clone()]), Some(&mut hi[..b.len()]))
        }
    }
}

/// Incremental decoding with a key/value cache. Inference only.
pub struct Decoder<'m> {
    model: &'m LanguageModel,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pos: usize,
    hidden: Vec<f64>,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m LanguageModel) -> Self {
        let l = model.cfg.n_layers;
        Self {
            model,
            keys: vec![Vec::new(); l],
            values: vec![Vec::new(); l],
            pos: 0,
            hidden: Vec::new(),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn push_prefix(&mut self, prefix: &PrefixEmbedding) -> Result<()> {
        self.model.check_prefix(prefix)?;
        for r in 0..prefix.rows {
            self.push_embedding(prefix.row(r))?;
        }
        Ok(())
    }

    pub fn push_token(&mut self, tok: TokenId) -> Result<()> {
        self.model.check_tokens(&[tok])?;
        let d = self.model.cfg.d_model;
        let t = tok as usize;
        let row = self.model.wte()[t * d..(t + 1) * d].to_vec();
        self.push_embedding(&row)
    }

    fn push_embedding(&mut self, emb: &[f64]) -> Result<()> {
        let m = self.model;
        let d = m.cfg.d_model;
        let nh = m.cfg.n_heads;
        let hs = d / nh;
        m.check_len(self.pos + 1)?;
        let wpe = m.w(&m.layout.wpe);
        let mut x: Vec<f64> = emb
            .iter()
            .zip(&wpe[self.pos * d..(self.pos + 1) * d])
            .map(|(a, b)| a + b)
            .collect();
        let mut ln = vec![0.0; d];
        let (mut mean, mut rstd) = ([0.0], [0.0]);
        let mut qkv = vec![0.0; 3 * d];
        let mut atty = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        let mut fch = vec![0.0; 4 * d];
        let mut fchg = vec![0.0; 4 * d];
        let scale = 1.0 / (hs as f64).sqrt();
        let n = self.pos + 1;
        let mut scores = vec![0.0; n];
        for (l, li) in m.layout.layers.iter().enumerate() {
            layernorm_forward(
                &mut ln,
                &mut mean,
                &mut rstd,
                &x,
                m.w(&li.ln1_w),
                m.w(&li.ln1_b),
                d,
            );
            linear_forward(
                &mut qkv,
                &ln,
                m.w(&li.qkv_w),
                Some(m.w(&li.qkv_b)),
                1,
                d,
                3 * d,
            );
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            atty.fill(0.0);
            for h in 0..nh {
                let q = &qkv[h * hs..(h + 1) * hs];
                let mut maxv = f64::NEG_INFINITY;
                for (t2, s) in scores.iter_mut().enumerate() {
                    let k = &self.keys[l][t2 * d + h * hs..t2 * d + (h + 1) * hs];
                    *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
                    maxv = maxv.max(*s);
                }
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - maxv).exp();
                    sum += *s;
                }
                let o = &mut atty[h * hs..(h + 1) * hs];
                for (t2, s) in scores.iter().enumerate() {
                    let a = s / sum;
                    let vrow = &self.values[l][t2 * d + h * hs..t2 * d + (h + 1) * hs];
                    for (oo, vv) in o.iter_mut().zip(vrow) {
                        *oo += a * vv;
                    }
                }
            }
            linear_forward(
                &mut tmp,
                &atty,
                m.w(&li.proj_w),
                Some(m.w(&li.proj_b)),
                1,
                d,
                d,
            );
            for (xi, ti) in x.iter_mut().zip(&tmp) {
                *xi += ti;
            }
            layernorm_forward(
                &mut ln,
                &mut mean,
                &mut rstd,
                &x,
                m.w(&li.ln2_w),
                m.w(&li.ln2_b),
                d,
            );
            linear_forward(
                &mut fch,
                &ln,
                m.w(&li.fc_w),
                Some(m.w(&li.fc_b)),
                1,
                d,
                4 * d,
            );
            gelu_forward(&mut fchg, &fch);
            linear_forward(
                &mut tmp,
                &fchg,
                m.w(&li.fcproj_w),
                Some(m.w(&li.fcproj_b)),
                1,
                4 * d,
                d,
            );
            for (xi, ti) in x.iter_mut().zip(&tmp) {
                *xi += ti;
            }
        }
        let mut out = vec![0.0; d];
        layernorm_forward(
            &mut out,
            &mut mean,
            &mut rstd,
            &x,
            m.w(&m.layout.lnf_w),
            m.w(&m.layout.lnf_b),
            d,
        );
        self.hidden = out;
        self.pos += 1;
        Ok(())
    }

    /// Next-token logits after the most recent position.
    pub fn logits(&self) -> Vec<f64> {
        let v = self.model.cfg.vocab_size;
        let d = self.model.cfg.d_model;
        let mut out = vec![0.0; v];
        linear_forward(&mut out, &self.hidden, self.model.wte(), None, 1, d, v);
        out
    }
}
