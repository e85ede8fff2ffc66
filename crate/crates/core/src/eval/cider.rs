use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;

type NgramCounts = [HashMap<Vec<String>, f64>; 4];

fn counts(text: &str) -> NgramCounts {
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    let mut out: NgramCounts = Default::default();
    for n in 1..=4 {
        if words.len() >= n {
            for g in words.windows(n) {
                *out[n - 1].entry(g.to_vec()).or_insert(0.0) += 1.0;
            }
        }
    }
    out
}

struct TfIdf {
    vec: [HashMap<Vec<String>, f64>; 4],
    norm: [f64; 4],
    /// Number of bigrams, used for the length penalty.
    length: f64,
}

fn tfidf(c: &NgramCounts, df: &HashMap<Vec<String>, f64>, log_n: f64) -> TfIdf {
    let mut vec: [HashMap<Vec<String>, f64>; 4] = Default::default();
    let mut norm = [0.0; 4];
    for n in 0..4 {
        for (g, &tf) in &c[n] {
            let v = tf * (log_n - df.get(g).copied().unwrap_or(0.0).max(1.0).ln());
            norm[n] += v * v;
            vec[n].insert(g.clone(), v);
        }
        norm[n] = norm[n].sqrt();
    }
    let length = c[1].values().sum();
    TfIdf { vec, norm, length }
}

fn sim(h: &TfIdf, r: &TfIdf) -> [f64; 4] {
    let delta = h.length - r.length;
    std::array::from_fn(|n| {
        let mut val = 0.0;
        for (g, &hv) in &h.vec[n] {
            if let Some(&rv) = r.vec[n].get(g) {
                val += hv.min(rv) * rv;
            }
        }
        if h.norm[n] != 0.0 && r.norm[n] != 0.0 {
            val /= h.norm[n] * r.norm[n];
        }
        val * (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp()
    })
}

/// Per-id CIDEr-D scores and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_id: BTreeMap<u64, f64>,
    pub mean: f64,
}

/// CIDEr-D: TF-IDF n-gram cosine (n = 1..4) with clipping and a Gaussian
/// length penalty, document frequencies over the reference sets, ×10.
pub fn cider(
    candidates: &BTreeMap<u64, String>,
    references: &BTreeMap<u64, Vec<String>>,
) -> Result<CiderScores> {
    if candidates.len() < 2 {
        return Err(Error::IdfUndefined);
    }
    for id in candidates.keys() {
        match references.get(id) {
            Some(r) if !r.is_empty() => {}
            _ => return Err(Error::InvalidArgument(format!("no references for id {id}"))),
        }
    }
    let ref_counts: BTreeMap<u64, Vec<NgramCounts>> = candidates
        .keys()
        .map(|id| (*id, references[id].iter().map(|r| counts(r)).collect()))
        .collect();
    let mut df: HashMap<Vec<String>, f64> = HashMap::new();
    for refs in ref_counts.values() {
        let mut seen: std::collections::HashSet<&Vec<String>> = std::collections::HashSet::new();
        for c in refs {
            for m in c {
                seen.extend(m.keys());
            }
        }
        for g in seen {
            *df.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let mut per_id = BTreeMap::new();
    for (id, cand) in candidates {
        let h = tfidf(&counts(cand), &df, log_n);
        let refs = &ref_counts[id];
        let mut acc = [0.0; 4];
        for r in refs {
            let s = sim(&h, &tfidf(r, &df, log_n));
            for n in 0..4 {
                acc[n] += s[n];
            }
        }
        let mean_n = acc.iter().sum::<f64>() / 4.0;
        per_id.insert(*id, mean_n / refs.len() as f64 * 10.0);
    }
    let mean = per_id.values().sum::<f64>() / per_id.len() as f64;
    Ok(CiderScores { per_id, mean })
}
