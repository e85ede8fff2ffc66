use std::collections::HashMap;
use std::hash::Hash;

/// Replaces a zero matched-n-gram count so the geometric mean stays defined.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and the candidate's n-gram total.
pub fn modified_precision<T: Eq + Hash>(
    candidate: &[T],
    references: &[Vec<T>],
    n: usize,
) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&[T], usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence BLEU-4 with uniform weights, brevity penalty against the closest
/// reference length (shorter wins ties) and add-epsilon smoothing of zero
/// match counts. An empty candidate scores 0.
pub fn bleu4<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>]) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, total) = modified_precision(candidate, references, n);
        let num = if m == 0 { BLEU_EPSILON } else { m as f64 };
        log_sum += (num / total.max(1) as f64).ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .unwrap_or(0);
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / 4.0).exp()
}

/// Whitespace-split convenience wrapper.
pub fn bleu4_text(candidate: &str, references: &[String]) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<Vec<&str>> = references
        .iter()
        .map(|s| s.split_whitespace().collect())
        .collect();
    bleu4(&c, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn exact_match_is_one() {
        let r = vec![w("a small red circle and a square")];
        assert!((bleu4(&r[0], &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_zero() {
        assert!(bleu4(&w("x y z q"), &[w("a b c d")]) < 1e-6);
    }

    #[test]
    fn worked_example() {
        // p1..p4 = 5/6, 3/5, 2/4, 1/3, equal lengths.
        let want = (5.0 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0f64).powf(0.25);
        let got = bleu4(&w("the cat sat on the mat"), &[w("the cat sat on a mat")]);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_and_clipping() {
        let (m, t) = modified_precision(&w("the the the"), &[w("the cat")], 1);
        assert_eq!((m, t), (1, 3));
        let short = bleu4(&w("a b c d"), &[w("a b c d e f g h")]);
        assert!((short - (1.0f64 - 2.0).exp()).abs() < 1e-12);
        let r1 = vec![w("a b c d e"), w("a b c d")];
        let r2 = vec![w("a b c d"), w("a b c d e")];
        assert_eq!(bleu4(&w("a b c d x"), &r1), bleu4(&w("a b c d x"), &r2));
    }
}
