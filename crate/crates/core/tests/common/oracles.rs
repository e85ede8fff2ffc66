//! Independent reference computations used as test oracles.

use std::collections::BTreeMap;

/// A_t as an explicit discounted sum of TD errors over the rest of the episode.
pub fn brute_gae(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let vnext = |t: usize| if t + 1 < n { v[t + 1] } else { 0.0 };
    let mut adv = vec![];
    for t in 0..n {
        let mut a = 0.0;
        for l in 0..n - t {
            let delta = r[t + l] + gamma * vnext(t + l) - v[t + l];
            a += (gamma * lambda).powi(l as i32) * delta;
        }
        adv.push(a);
    }
    let ret = adv.iter().zip(v).map(|(a, v)| a + v).collect();
    (adv, ret)
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn grams(s: &str, n: usize) -> Vec<String> {
    let w = words(s);
    if w.len() < n {
        return vec![];
    }
    (0..=w.len() - n).map(|i| w[i..i + n].join(" ")).collect()
}

fn occurrences(list: &[String], g: &str) -> usize {
    list.iter().filter(|x| *x == g).count()
}

pub fn oracle_bleu(cand: &str, refs: &[String]) -> f64 {
    let c_len = words(cand).len();
    if c_len == 0 {
        return 0.0;
    }
    let mut logp = 0.0;
    for n in 1..=4 {
        let cg = grams(cand, n);
        let mut distinct = cg.clone();
        distinct.sort();
        distinct.dedup();
        let mut matched = 0usize;
        for g in &distinct {
            let best_ref = refs
                .iter()
                .map(|r| occurrences(&grams(r, n), g))
                .max()
                .unwrap_or(0);
            matched += occurrences(&cg, g).min(best_ref);
        }
        let p = if matched == 0 { 1e-9 } else { matched as f64 } / (cg.len().max(1)) as f64;
        logp += p.ln() / 4.0;
    }
    let mut r_len = usize::MAX;
    let mut best_gap = usize::MAX;
    for r in refs {
        let l = words(r).len();
        let gap = l.abs_diff(c_len);
        if gap < best_gap || (gap == best_gap && l < r_len) {
            best_gap = gap;
            r_len = l;
        }
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    bp * logp.exp()
}

/// Dense-vector CIDEr-D over an explicit n-gram index.
pub fn oracle_cider(
    cands: &[(u64, &str)],
    refs: &BTreeMap<u64, Vec<String>>,
) -> BTreeMap<u64, f64> {
    let n_docs = cands.len() as f64;
    let mut out = BTreeMap::new();
    for &(id, cand) in cands {
        let rs = &refs[&id];
        let mut total = 0.0;
        for n in 1..=4 {
            let mut index: Vec<String> = grams(cand, n);
            for r in rs {
                index.extend(grams(r, n));
            }
            index.sort();
            index.dedup();
            let df = |g: &str| -> f64 {
                cands
                    .iter()
                    .filter(|(j, _)| refs[j].iter().any(|r| grams(r, n).iter().any(|x| x == g)))
                    .count() as f64
            };
            let vecf = |s: &str| -> Vec<f64> {
                let gs = grams(s, n);
                index
                    .iter()
                    .map(|g| occurrences(&gs, g) as f64 * (n_docs.ln() - df(g).max(1.0).ln()))
                    .collect()
            };
            let h = vecf(cand);
            for r in rs {
                let rv = vecf(r);
                let mut dot = 0.0;
                for k in 0..index.len() {
                    if h[k] != 0.0 {
                        dot += h[k].min(rv[k]) * rv[k];
                    }
                }
                let nh = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nr = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nh != 0.0 && nr != 0.0 {
                    dot /= nh * nr;
                }
                let delta = grams(cand, 2).len() as f64 - grams(r, 2).len() as f64;
                total += dot * (-(delta * delta) / 72.0).exp() / 4.0;
            }
        }
        out.insert(id, total / rs.len() as f64 * 10.0);
    }
    out
}

pub type Corpus = (Vec<(u64, &'static str)>, BTreeMap<u64, Vec<String>>);

pub fn corpus() -> Corpus {
    let rows: [(u64, &str, &[&str]); 10] = [
        (
            0,
            "a small red circle",
            &[
                "a small red circle",
                "there is a small red circle",
                "a picture of a small red circle",
            ],
        ),
        (
            1,
            "a blue square and a blue square",
            &["a blue square", "an image of a blue square"],
        ),
        (
            2,
            "there is a green star",
            &["a large green star", "there is a large green star"],
        ),
        (3, "star", &["a yellow star", "a picture of a yellow star"]),
        (
            4,
            "a picture of a purple hexagon on the left",
            &["a purple hexagon", "a picture of a purple hexagon"],
        ),
        (
            5,
            "the the the the",
            &["a white cross", "there is a white cross"],
        ),
        (6, "a large black triangle", &["a large black triangle"]),
        (
            7,
            "an image showing a medium orange circle",
            &[
                "a medium orange circle",
                "an image showing a medium orange circle",
            ],
        ),
        (
            8,
            "a red square and a blue circle",
            &[
                "a red square and circle",
                "there is a red square and circle",
            ],
        ),
        (
            9,
            "a small small small shape",
            &[
                "a small shape",
                "an image of a small shape",
                "there is a small shape",
            ],
        ),
    ];
    let cands = rows.iter().map(|(i, c, _)| (*i, *c)).collect();
    let refs = rows
        .iter()
        .map(|(i, _, r)| (*i, r.iter().map(|s| s.to_string()).collect()))
        .collect();
    (cands, refs)
}
