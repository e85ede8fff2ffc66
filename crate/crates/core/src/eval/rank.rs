use crate::corpus::{TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, PrefixEmbedding};
use crate::scorer::Scorer;

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Candidate indices, best first.
    pub order: Vec<usize>,
    /// Mean per-token log-likelihood per candidate, in input order.
    pub scores: Vec<f64>,
    /// 1-based rank of the gold candidate.
    pub gold_rank: Option<usize>,
}

impl Ranking {
    pub fn reciprocal_rank(&self) -> Option<f64> {
        self.gold_rank.map(|r| 1.0 / r as f64)
    }

    pub fn recall_at_1(&self) -> Option<f64> {
        self.gold_rank.map(|r| if r == 1 { 1.0 } else { 0.0 })
    }
}

/// Order by descending score; equal scores keep input order.
pub fn rank_scores(scores: &[f64], gold: Option<usize>) -> Ranking {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let gold_rank = gold
        .and_then(|g| order.iter().position(|&i| i == g))
        .map(|p| p + 1);
    Ranking {
        order,
        scores: scores.to_vec(),
        gold_rank,
    }
}

/// Rank candidates by mean per-token log-likelihood given the prefix rows
/// and the question prompt.
pub fn likelihood_rank(
    model: &LanguageModel,
    prefix: &PrefixEmbedding,
    question: &[TokenId],
    candidates: &[TokenSequence],
    gold: Option<usize>,
) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates to rank".into()));
    }
    if let Some(g) = gold {
        if g >= candidates.len() {
            return Err(Error::InvalidArgument(format!(
                "gold index {g} out of range for {} candidates",
                candidates.len()
            )));
        }
    }
    let scores = candidates
        .iter()
        .map(|c| {
            if c.is_empty() {
                return Err(Error::InvalidArgument("empty candidate".into()));
            }
            let lps = model.log_probs(prefix, question, c)?;
            Ok(lps.iter().sum::<f64>() / lps.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_scores(&scores, gold))
}

/// Pool member with the highest cosine to the input; ties go to the lowest
/// index. Returns the index and the cosine.
pub fn retrieval_baseline(
    scorer: &dyn Scorer,
    input_id: u64,
    pool: &[String],
) -> Result<(usize, f64)> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty candidate pool".into()));
    }
    let ids = vec![input_id; pool.len()];
    let cos = scorer.score(pool, &ids)?;
    let mut best = 0;
    for (i, c) in cos.iter().enumerate() {
        if *c > cos[best] {
            best = i;
        }
    }
    Ok((best, cos[best]))
}
