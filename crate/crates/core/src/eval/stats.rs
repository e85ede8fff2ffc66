use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub mean_difference: f64,
    pub t: f64,
    /// One-sided p-value for `after > before`.
    pub p_greater: f64,
}

/// Paired t-test on `after - before`.
pub fn paired_t_test(before: &[f64], after: &[f64]) -> Result<PairedTTest> {
    if before.len() != after.len() {
        return Err(Error::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    let n = before.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if se == 0.0 {
        let p = if mean > 0.0 { 0.0 } else { 1.0 };
        return Ok(PairedTTest {
            mean_difference: mean,
            t: f64::INFINITY.copysign(mean),
            p_greater: p,
        });
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(PairedTTest {
        mean_difference: mean,
        t,
        p_greater: 1.0 - dist.cdf(t),
    })
}
