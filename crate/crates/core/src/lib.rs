//! Simulator for federated neural architecture search by iterative filter
//! pruning.
//!
//! A pre-trained seed network is adapted to a sequence of shrinking MAC
//! budgets. Each iteration prunes one layer at a time to produce candidates,
//! fine-tunes them briefly on disjoint groups of simulated clients, drops the
//! weakest early, and keeps the candidate with the best accuracy-per-MAC
//! trade-off. A cost ledger records every simulated byte and MAC spent on
//! clients.

pub mod coordinator;
pub mod cost;
pub mod data;
pub mod error;
pub mod grouping;
pub mod nn;
pub mod pruner;
pub mod rng;

pub use error::{Error, Result};
