//! Learning to produce text conditioned on non-text features by training a
//! small adapter against a frozen language model with reinforcement learning.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kernels;
pub mod lm;
pub mod optim;
pub mod par;
pub mod params;
pub mod plot;
pub mod ppo;
pub mod rewards;
pub mod rng;
pub mod run;
pub mod scorer;
pub mod style;

pub use error::{Error, Result};
