//! Caption metrics, retrieval and ranking protocols, and run reports.

pub mod bleu;
pub mod cider;
pub mod rank;
pub mod report;
pub mod stats;

pub use bleu::{bleu4, bleu4_text, modified_precision, BLEU_EPSILON};
pub use cider::{cider, CiderScores, CIDER_SIGMA};
pub use rank::{likelihood_rank, rank_scores, retrieval_baseline, Ranking};
pub use report::{evaluate_run, EvalInputs, EvalRecord, EvalReport, MetricSelection};
pub use stats::{paired_t_test, PairedTTest};
