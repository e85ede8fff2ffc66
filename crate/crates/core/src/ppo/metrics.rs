use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rollout::RolloutBatch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub input_id: u64,
    pub text: String,
    pub length: usize,
    pub cosine: f64,
    pub pairing: f64,
    pub kl: f64,
    pub entropy: f64,
    pub repetition: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub cosine: Stat,
    pub pairing: Stat,
    pub kl: Stat,
    pub entropy: Stat,
    pub repetition: Stat,
    pub total: Stat,
    pub length: Stat,
}

impl RewardStats {
    pub fn from_samples(s: &[SampleRecord]) -> Self {
        Self {
            cosine: Stat::of(s.iter().map(|r| r.cosine)),
            pairing: Stat::of(s.iter().map(|r| r.pairing)),
            kl: Stat::of(s.iter().map(|r| r.kl)),
            entropy: Stat::of(s.iter().map(|r| r.entropy)),
            repetition: Stat::of(s.iter().map(|r| r.repetition)),
            total: Stat::of(s.iter().map(|r| r.total)),
            length: Stat::of(s.iter().map(|r| r.length as f64)),
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    /// Global batch counter, starting at 0.
    pub batch: usize,
    pub rewards: RewardStats,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Norm of the first policy gradient of this batch.
    pub grad_norm: f64,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_cosine: Option<f64>,
    pub samples: Vec<SampleRecord>,
}

pub fn sample_records(batch: &RolloutBatch) -> Vec<SampleRecord> {
    batch
        .episodes
        .iter()
        .map(|e| SampleRecord {
            input_id: e.input_id,
            text: e.text.clone(),
            length: e.tokens.len(),
            cosine: e.cosine,
            pairing: e.rewards.pairing,
            kl: e.rewards.kl_total(),
            entropy: e.rewards.entropy,
            repetition: e.rewards.repetition,
            total: e.rewards.total(),
        })
        .collect()
}

/// Append-only JSON-lines log. Records are also kept in memory.
#[derive(Debug, Default)]
pub struct MetricsLog {
    path: Option<PathBuf>,
    records: Vec<BatchRecord>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates or truncates `path`.
    pub fn create(path: &Path) -> Result<Self> {
        File::create(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            records: Vec::new(),
        })
    }

    pub fn append(&mut self, record: BatchRecord) -> Result<()> {
        if let Some(p) = &self.path {
            let mut f = OpenOptions::new().append(true).open(p)?;
            serde_json::to_writer(&mut f, &record)?;
            f.write_all(b"\n")?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[BatchRecord] {
        &self.records
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<BatchRecord>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Recompute every record's aggregates from its samples and check them
/// against the logged values.
pub fn replay(records: &[BatchRecord]) -> Result<()> {
    for r in records {
        if RewardStats::from_samples(&r.samples) != r.rewards {
            return Err(Error::InvalidArgument(format!(
                "batch {} aggregates do not match its samples",
                r.batch
            )));
        }
    }
    Ok(())
}
