//! Simulated client-side cost accounting: bytes moved and MACs spent.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Bytes for one accuracy report.
pub const ACCURACY_REPORT_BYTES: u64 = 8;
/// Bytes per class in an uploaded class-count summary.
pub const SUMMARY_BYTES_PER_CLASS: u64 = 4;
/// Training cost of one sample relative to its forward pass.
pub const TRAIN_MAC_FACTOR: u64 = 3;
/// Puts one local epoch of the unpruned desk network near one second:
/// 166,400 MACs x 3 x 18 training samples on an average client.
pub const DEFAULT_SECONDS_PER_MAC: f64 = 1.1e-7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub iteration: usize,
    /// 0 for per-iteration work outside the fine-tune rounds.
    pub round: usize,
    /// `None` for work not tied to a candidate (summaries, evaluation of the
    /// starting model).
    pub candidate_id: Option<usize>,
    pub client_id: usize,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub compute_macs: u64,
}

/// What the ledger needs to know about a participating client.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientLoad {
    pub client_id: usize,
    pub train_num: usize,
    pub test_num: usize,
}

/// Where in the search a round sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundRef {
    pub iteration: usize,
    pub round: usize,
    pub candidate_id: usize,
}

/// One fine-tune round of one candidate on its group: model download, local
/// training and validation, accuracy upload, and the delta upload unless the
/// candidate was dropped this round.
pub fn record_round(at: RoundRef, macs: u64, param_bytes: u64, group: &[ClientLoad], epochs: usize, dropped_this_round: bool) -> Vec<LedgerEntry> {
    group
        .iter()
        .map(|c| LedgerEntry {
            iteration: at.iteration,
            round: at.round,
            candidate_id: Some(at.candidate_id),
            client_id: c.client_id,
            uplink_bytes: ACCURACY_REPORT_BYTES + if dropped_this_round { 0 } else { param_bytes },
            downlink_bytes: param_bytes,
            compute_macs: macs * c.train_num as u64 * epochs as u64 * TRAIN_MAC_FACTOR + macs * c.test_num as u64,
        })
        .collect()
}

/// Class-count summaries uploaded for partitioning.
pub fn record_summaries(iteration: usize, client_ids: &[usize], class_count: usize) -> Vec<LedgerEntry> {
    client_ids
        .iter()
        .map(|&client_id| LedgerEntry {
            iteration,
            round: 0,
            candidate_id: None,
            client_id,
            uplink_bytes: SUMMARY_BYTES_PER_CLASS * class_count as u64,
            downlink_bytes: 0,
            compute_macs: 0,
        })
        .collect()
}

/// Validation-only pass of a model on each client (no training, no delta).
pub fn record_evaluation(iteration: usize, macs: u64, param_bytes: u64, clients: &[ClientLoad]) -> Vec<LedgerEntry> {
    clients
        .iter()
        .map(|c| LedgerEntry {
            iteration,
            round: 0,
            candidate_id: None,
            client_id: c.client_id,
            uplink_bytes: ACCURACY_REPORT_BYTES,
            downlink_bytes: param_bytes,
            compute_macs: macs * c.test_num as u64,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
    pub total_compute_macs: u64,
    pub total_compute_seconds: f64,
    pub clients: usize,
    pub avg_uplink_bytes_per_client: f64,
    pub avg_downlink_bytes_per_client: f64,
    pub avg_compute_seconds_per_client: f64,
}

pub fn summarize(entries: &[LedgerEntry], seconds_per_mac: f64) -> CostSummary {
    let clients = entries.iter().map(|e| e.client_id).collect::<BTreeSet<_>>().len();
    let up: u64 = entries.iter().map(|e| e.uplink_bytes).sum();
    let down: u64 = entries.iter().map(|e| e.downlink_bytes).sum();
    let macs: u64 = entries.iter().map(|e| e.compute_macs).sum();
    let seconds = macs as f64 * seconds_per_mac;
    let per = |x: f64| if clients == 0 { 0.0 } else { x / clients as f64 };
    CostSummary {
        total_uplink_bytes: up,
        total_downlink_bytes: down,
        total_compute_macs: macs,
        total_compute_seconds: seconds,
        clients,
        avg_uplink_bytes_per_client: per(up as f64),
        avg_downlink_bytes_per_client: per(down as f64),
        avg_compute_seconds_per_client: per(seconds),
    }
}
