//! Sampling, greedy decoding and start-token selection.

use rand::Rng;

use super::model::{Decoder, LanguageModel, PrefixEmbedding};
use crate::corpus::{TokenId, TokenSequence, Vocabulary, EOS_ID, UNK_ID};
use crate::error::{Error, Result};
use crate::kernels::{argmax, log_softmax};

/// Tokens produced by [`sample`] together with their temperature-1
/// log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub tokens: TokenSequence,
    pub log_probs: Vec<f64>,
}

fn start_decoder<'m>(
    model: &'m LanguageModel,
    prefix: &PrefixEmbedding,
    prompt: &[TokenId],
) -> Result<Decoder<'m>> {
    if prefix.rows + prompt.len() == 0 {
        return Err(Error::InvalidArgument(
            "generation needs a prefix or a prompt".into(),
        ));
    }
    let mut dec = Decoder::new(model);
    dec.push_prefix(prefix)?;
    for &t in prompt {
        dec.push_token(t)?;
    }
    Ok(dec)
}

fn check_budget(
    model: &LanguageModel,
    prefix: &PrefixEmbedding,
    prompt: &[TokenId],
    max_new: usize,
) -> Result<()> {
    if max_new == 0 {
        return Err(Error::InvalidArgument("max_new must be at least 1".into()));
    }
    // The last generated token is never fed back, so it needs no position.
    let needed = prefix.rows + prompt.len() + max_new - 1;
    if needed > model.config().max_len {
        return Err(Error::LengthOverflow {
            len: needed,
            max_len: model.config().max_len,
        });
    }
    Ok(())
}

/// Draw tokens at `temperature` until `<eos>` or `max_new` tokens. The
/// recorded log-probabilities are those of the temperature-1 distribution.
pub fn sample<R: Rng>(
    model: &LanguageModel,
    prefix: &PrefixEmbedding,
    prompt: &[TokenId],
    temperature: f64,
    max_new: usize,
    rng: &mut R,
) -> Result<Sampled> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    check_budget(model, prefix, prompt, max_new)?;
    let mut dec = start_decoder(model, prefix, prompt)?;
    let mut out = Sampled {
        tokens: Vec::new(),
        log_probs: Vec::new(),
    };
    for step in 0..max_new {
        let logits = dec.logits();
        let lp = log_softmax(&logits);
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let lq = log_softmax(&scaled);
        let coin: f64 = rng.gen();
        let mut acc = 0.0;
        let mut tok = argmax(&lq);
        for (i, l) in lq.iter().enumerate() {
            acc += l.exp();
            if coin < acc {
                tok = i;
                break;
            }
        }
        out.tokens.push(tok as TokenId);
        out.log_probs.push(lp[tok]);
        if tok as TokenId == EOS_ID || step + 1 == max_new {
            break;
        }
        dec.push_token(tok as TokenId)?;
    }
    Ok(out)
}

/// Argmax decoding; ties go to the lowest token id.
pub fn greedy_decode(
    model: &LanguageModel,
    prefix: &PrefixEmbedding,
    prompt: &[TokenId],
    max_new: usize,
) -> Result<TokenSequence> {
    check_budget(model, prefix, prompt, max_new)?;
    let mut dec = start_decoder(model, prefix, prompt)?;
    let mut out = Vec::new();
    for step in 0..max_new {
        let tok = argmax(&dec.logits()) as TokenId;
        out.push(tok);
        if tok == EOS_ID || step + 1 == max_new {
            break;
        }
        dec.push_token(tok)?;
    }
    Ok(out)
}

/// Draw a start token with probability proportional to corpus frequency,
/// never `<eos>` or `<unk>`.
pub fn sample_start_token<R: Rng>(vocab: &Vocabulary, rng: &mut R) -> Result<TokenId> {
    let weights: Vec<u64> = vocab
        .frequency()
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            if i as TokenId == EOS_ID || i as TokenId == UNK_ID {
                0
            } else {
                f
            }
        })
        .collect();
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return Err(Error::ZeroFrequencies);
    }
    let mut r = rng.gen_range(0..total);
    for (i, w) in weights.iter().enumerate() {
        if r < *w {
            return Ok(i as TokenId);
        }
        r -= w;
    }
    unreachable!("weights sum to total")
}
