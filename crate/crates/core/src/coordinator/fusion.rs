use serde::{Deserialize, Serialize};

use crate::coordinator::ClientReport;
use crate::error::{Error, Result};
use crate::nn::{weighted_mean, GradientDelta};
use crate::pruner::Candidate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateState {
    pub candidate: Candidate,
    /// Fused validation accuracy after each round the candidate took part in.
    pub fused_acc_history: Vec<f64>,
    pub degradation: f64,
    pub alive: bool,
    pub assigned_group: usize,
    pub dropped_round: Option<usize>,
}

impl CandidateState {
    pub fn new(candidate: Candidate, assigned_group: usize) -> Self {
        Self {
            candidate,
            fused_acc_history: Vec::new(),
            degradation: f64::INFINITY,
            alive: true,
            assigned_group,
            dropped_round: None,
        }
    }

    pub fn last_accuracy(&self) -> Option<f64> {
        self.fused_acc_history.last().copied()
    }
}

/// Validation accuracy weighted by each client's validation size.
pub fn fuse_accuracy(reports: &[ClientReport]) -> Result<f64> {
    let total: usize = reports.iter().map(|r| r.test_num).sum();
    if total == 0 {
        return Err(Error::EmptySamples("no validation samples to fuse".into()));
    }
    Ok(reports.iter().map(|r| r.acc * r.test_num as f64).sum::<f64>() / total as f64)
}

/// Training-size-weighted mean of the reported deltas, summed in client order.
pub fn fuse_gradients(reports: &[ClientReport]) -> Result<GradientDelta> {
    let mut sorted: Vec<&ClientReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.client_id);
    if sorted.iter().map(|r| r.train_num).sum::<usize>() == 0 {
        return Err(Error::EmptySamples("no training samples to fuse".into()));
    }
    let items = sorted
        .iter()
        .map(|r| {
            r.grad
                .as_ref()
                .map(|g| (r.train_num as f64, g))
                .ok_or_else(|| Error::invalid(format!("client {} sent no update", r.client_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    weighted_mean(items)
}

/// Accuracy lost per MAC saved relative to the previous global model; lower is better.
pub fn acc_degradation(prev_acc: f64, prev_macs: u64, acc: f64, macs: u64) -> Result<f64> {
    if macs >= prev_macs {
        return Err(Error::invalid(format!("candidate ({macs} MACs) saves nothing over {prev_macs} MACs")));
    }
    Ok((prev_acc - acc) / (prev_macs - macs) as f64)
}

/// Drops `min(ceil(alpha% · k_original), alive - 1)` alive candidates with the
/// largest degradation (ties: higher id first). Returns the dropped ids.
pub fn drop_candidates(states: &mut [CandidateState], alpha: f64, k_original: usize, round: usize) -> Vec<usize> {
    let alive: Vec<usize> = (0..states.len()).filter(|&i| states[i].alive).collect();
    let quota = (alpha * k_original as f64 / 100.0).ceil().max(0.0) as usize;
    let drop_num = quota.min(alive.len().saturating_sub(1));
    let mut worst = alive;
    worst.sort_by(|&a, &b| {
        states[b]
            .degradation
            .total_cmp(&states[a].degradation)
            .then(states[b].candidate.candidate_id.cmp(&states[a].candidate.candidate_id))
    });
    let mut dropped: Vec<usize> = worst
        .into_iter()
        .take(drop_num)
        .map(|i| {
            states[i].alive = false;
            states[i].dropped_round = Some(round);
            states[i].candidate.candidate_id
        })
        .collect();
    dropped.sort_unstable();
    dropped
}
