use crate::error::{Error, Result};

/// Per-token pieces of the clipped surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTerms {
    /// `min(ρA, clip(ρ)A)` per token.
    pub objective: Vec<f64>,
    /// `∂objective/∂log π_new` per token; zero where the clipped branch binds.
    pub dobjective: Vec<f64>,
    /// Whether the clipped branch binds.
    pub clipped: Vec<bool>,
}

pub fn clip_terms(
    new_logprobs: &[f64],
    old_logprobs: &[f64],
    advantages: &[f64],
    clip_epsilon: f64,
) -> Result<ClipTerms> {
    let n = new_logprobs.len();
    if old_logprobs.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: old_logprobs.len(),
        });
    }
    if advantages.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: advantages.len(),
        });
    }
    let mut out = ClipTerms {
        objective: Vec::with_capacity(n),
        dobjective: Vec::with_capacity(n),
        clipped: Vec::with_capacity(n),
    };
    for ((&new, &old), &a) in new_logprobs.iter().zip(old_logprobs).zip(advantages) {
        let ratio = (new - old).exp();
        if !ratio.is_finite() {
            return Err(Error::NonFinite(format!(
                "importance ratio exp({new} - {old})"
            )));
        }
        let unclipped = ratio * a;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * a;
        if clipped < unclipped {
            out.objective.push(clipped);
            out.dobjective.push(0.0);
            out.clipped.push(true);
        } else {
            out.objective.push(unclipped);
            out.dobjective.push(unclipped);
            out.clipped.push(false);
        }
    }
    Ok(out)
}

/// `-mean_t min(ρ_t A_t, clip(ρ_t, 1-ε, 1+ε) A_t)` with `ρ_t = exp(new - old)`.
pub fn ppo_clip_loss(
    new_logprobs: &[f64],
    old_logprobs: &[f64],
    advantages: &[f64],
    clip_epsilon: f64,
) -> Result<f64> {
    let t = clip_terms(new_logprobs, old_logprobs, advantages, clip_epsilon)?;
    if t.objective.is_empty() {
        return Ok(0.0);
    }
    Ok(-t.objective.iter().sum::<f64>() / t.objective.len() as f64)
}

/// Mean squared error.
pub fn value_loss(values: &[f64], returns: &[f64]) -> Result<f64> {
    if values.len() != returns.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: returns.len(),
        });
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    Ok(values
        .iter()
        .zip(returns)
        .map(|(v, r)| (v - r).powi(2))
        .sum::<f64>()
        / values.len() as f64)
}
