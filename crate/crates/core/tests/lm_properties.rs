//! Backbone, decoding, vocabulary and ranking properties.

mod common;

use std::collections::BTreeMap;

use esper_core::checkpoint::Archive;
use esper_core::corpus::{build_vocabulary, EOS_ID, UNK_ID};
use esper_core::eval::likelihood_rank;
use esper_core::lm::{
    greedy_decode, sample, sample_start_token, LanguageModel, LmConfig, PrefixEmbedding,
};
use esper_core::rng::substream;
use esper_core::Error;
use rand::Rng;

fn model(seed: u64) -> LanguageModel {
    LanguageModel::new(
        LmConfig {
            vocab_size: 12,
            d_model: 16,
            n_layers: 2,
            n_heads: 4,
            max_len: 16,
        },
        seed,
    )
    .unwrap()
}

fn prefix(m: &LanguageModel, rows: usize, seed: u64) -> PrefixEmbedding {
    let mut rng = substream(seed, "prefix", &[]);
    let d = m.config().d_model;
    PrefixEmbedding::from_vec(
        rows,
        d,
        (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn next_token_distribution_normalizes() {
    let m = model(1);
    let p = prefix(&m, 2, 1);
    for ctx in [vec![], vec![3u32], vec![3, 4, 5]] {
        let total: f64 = (0..12u32)
            .map(|v| m.log_probs(&p, &ctx, &[v]).unwrap()[0].exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn causal_masking() {
    let m = model(2);
    let p = prefix(&m, 2, 2);
    let a = m.log_probs(&p, &[2], &[3, 4, 5, 6]).unwrap();
    let b = m.log_probs(&p, &[2], &[3, 4, 5, 9]).unwrap();
    assert_eq!(a[..3], b[..3]);
    assert_ne!(a[3], b[3]);
}

#[test]
fn prefix_changes_the_distribution() {
    let m = model(3);
    let a = m.log_probs(&prefix(&m, 2, 1), &[2], &[3, 4]).unwrap();
    let b = m.log_probs(&prefix(&m, 2, 2), &[2], &[3, 4]).unwrap();
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-6));
}

#[test]
fn greedy_decode_follows_full_forward_argmax() {
    let m = model(4);
    let p = prefix(&m, 3, 4);
    let out = greedy_decode(&m, &p, &[5], 8).unwrap();
    let mut ctx = vec![5u32];
    for &tok in &out {
        let lps: Vec<f64> = (0..12u32)
            .map(|v| m.log_probs(&p, &ctx, &[v]).unwrap()[0])
            .collect();
        let best = (0..12).fold(0, |b, i| if lps[i] > lps[b] { i } else { b });
        assert_eq!(tok, best as u32);
        ctx.push(tok);
    }
    assert!(out.len() == 8 || *out.last().unwrap() == EOS_ID);
}

#[test]
fn sampled_log_probs_are_temperature_one() {
    let m = model(5);
    let p = prefix(&m, 2, 5);
    let mut rng = substream(1, "s", &[]);
    for _ in 0..5 {
        let s = sample(&m, &p, &[4], 0.7, 6, &mut rng).unwrap();
        let lp = m.log_probs(&p, &[4], &s.tokens).unwrap();
        for (a, b) in s.log_probs.iter().zip(&lp) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn lower_temperature_concentrates_samples() {
    let m = model(6);
    let p = prefix(&m, 2, 6);
    let lps: Vec<f64> = (0..12u32)
        .map(|v| m.log_probs(&p, &[4], &[v]).unwrap()[0])
        .collect();
    let mode = (0..12).fold(0, |b, i| if lps[i] > lps[b] { i } else { b }) as u32;
    let freq = |t: f64| {
        let mut rng = substream(2, "temp", &[]);
        (0..4000)
            .filter(|_| sample(&m, &p, &[4], t, 1, &mut rng).unwrap().tokens[0] == mode)
            .count()
    };
    assert!(freq(0.3) > freq(1.0));
}

#[test]
fn length_budget_is_enforced() {
    let m = model(7);
    let p = prefix(&m, 4, 7);
    assert!(matches!(
        greedy_decode(&m, &p, &[1; 4], 10),
        Err(Error::LengthOverflow { .. })
    ));
}

#[test]
fn start_tokens_follow_corpus_frequency() {
    let v = build_vocabulary(&["a a a b"], 8).unwrap();
    let mut rng = substream(3, "start", &[]);
    let n = 10_000;
    let mut a = 0;
    for _ in 0..n {
        let t = sample_start_token(&v, &mut rng).unwrap();
        assert!(t != EOS_ID && t != UNK_ID);
        if v.surface(t) == "a" {
            a += 1;
        }
    }
    let frac = a as f64 / n as f64;
    assert!((frac - 0.75).abs() < 0.02, "{frac}");
}

#[test]
fn vocabulary_matches_naive_counts_on_10k_lines() {
    let mut rng = substream(4, "lines", &[]);
    let words = [
        "red", "blue", "green", "circle", "square", "a", "the", "small", "big", "star", "of", "and",
    ];
    let lines: Vec<String> = (0..10_000)
        .map(|_| {
            let n = rng.gen_range(1..8);
            (0..n)
                .map(|_| {
                    words[rng
                        .gen_range(0..words.len())
                        .min(rng.gen_range(0..words.len()))]
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let v = build_vocabulary(&lines, 9).unwrap();
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for l in &lines {
        for w in l.split(' ') {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    assert_eq!(v.len(), 9);
    for (i, (w, c)) in ranked.iter().take(7).enumerate() {
        assert_eq!(v.surface(i as u32 + 2), *w);
        assert_eq!(v.frequency()[i + 2], *c);
    }
    let dropped: u64 = ranked.iter().skip(7).map(|x| x.1).sum();
    assert_eq!(v.frequency()[UNK_ID as usize], dropped);
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let m = model(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.ckpt");
    m.to_archive().write(&path).unwrap();
    let back = LanguageModel::from_archive(&Archive::read(&path).unwrap()).unwrap();
    assert_eq!(back.fingerprint(), m.fingerprint());

    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(Archive::read(&path)
        .and_then(|a| LanguageModel::from_archive(&a))
        .is_err());
}

/// Backbone whose next-token distribution ignores the context entirely:
/// blocks and positions are zeroed and the final layer norm emits a fixed
/// vector, so logits are `wte[v][0]`.
fn unigram_model(scores: &[f64]) -> LanguageModel {
    let d = 4;
    let mut m = LanguageModel::new(
        LmConfig {
            vocab_size: scores.len(),
            d_model: d,
            n_layers: 1,
            n_heads: 1,
            max_len: 16,
        },
        0,
    )
    .unwrap();
    let names: Vec<String> = m.params().specs().iter().map(|s| s.name.clone()).collect();
    for n in names {
        if n.starts_with('h') || n == "wpe" || n == "lnf.w" {
            m.params_mut().get_mut(&n).fill(0.0);
        }
    }
    let lnf_b = m.params_mut().get_mut("lnf.b");
    lnf_b.fill(0.0);
    lnf_b[0] = 1.0;
    let wte = m.params_mut().get_mut("wte");
    for (v, s) in scores.iter().enumerate() {
        wte[v * d] = *s;
    }
    m
}

#[test]
fn likelihood_rank_follows_forced_preferences() {
    let scores = [0.0, -5.0, 3.0, 2.0, 1.0, 0.5];
    let m = unigram_model(&scores);
    let lse = scores.iter().map(|s| s.exp()).sum::<f64>().ln();
    let lp = |t: u32| scores[t as usize] - lse;
    let cands = vec![vec![4, 4, 0], vec![2, 2, 0], vec![5, 3, 0], vec![1, 1, 0]];
    let r = likelihood_rank(&m, &PrefixEmbedding::zeros(2, 4), &[3], &cands, Some(0)).unwrap();
    for (c, s) in cands.iter().zip(&r.scores) {
        let want = c.iter().map(|&t| lp(t)).sum::<f64>() / c.len() as f64;
        assert!((s - want).abs() < 1e-9);
    }
    assert_eq!(r.order, vec![1, 2, 0, 3]);
    assert_eq!(r.gold_rank, Some(3));
    assert!((r.reciprocal_rank().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let top = likelihood_rank(&m, &PrefixEmbedding::zeros(2, 4), &[3], &cands, Some(1)).unwrap();
    assert_eq!(top.reciprocal_rank(), Some(1.0));
    assert_eq!(top.recall_at_1(), Some(1.0));
}
