use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{
    acc_degradation, client_operation, drop_candidates, dynamic_round_number, fuse_accuracy, fuse_gradients, validation_accuracy,
    CandidateState, ClientReport, LocalTraining, RoundSchedule,
};
use crate::cost::{record_evaluation, record_round, record_summaries, ClientLoad, LedgerEntry, RoundRef};
use crate::data::{ClientDataset, Federation};
use crate::error::{Error, Result};
use crate::grouping::{greedy_partition, schedule, single_group, Partition};
use crate::nn::Model;
use crate::pruner::{budget_schedule, generate_candidates, BudgetSchedule};
use crate::rng::{rng_for, stream, SimRng};

/// Budget schedule parameters as fractions of the starting model's MACs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub delta_fraction: f64,
    pub decay: f64,
    pub final_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub grouping: bool,
    pub dynamic_rounds: bool,
    pub early_drop: bool,
}

impl Toggles {
    pub const ALL: Self = Self {
        grouping: true,
        dynamic_rounds: true,
        early_drop: true,
    };
    pub const NONE: Self = Self {
        grouping: false,
        dynamic_rounds: false,
        early_drop: false,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub seed: u64,
    pub groups: usize,
    pub balance_tolerance: f64,
    pub training: LocalTraining,
    /// Percentage of the initial candidate count dropped per round.
    pub drop_percent: f64,
    pub round_schedule: RoundSchedule,
    pub budget: BudgetConfig,
    pub toggles: Toggles,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.groups == 0 {
            return Err(Error::invalid("group count must be at least 1"));
        }
        if !(0.0..=100.0).contains(&self.drop_percent) {
            return Err(Error::invalid(format!("drop percent must be in [0, 100], got {}", self.drop_percent)));
        }
        if !(self.balance_tolerance >= 1.0 && self.balance_tolerance.is_finite()) {
            return Err(Error::invalid("balance tolerance must be >= 1"));
        }
        let b = self.budget;
        if !(b.delta_fraction > 0.0 && b.delta_fraction < 1.0) {
            return Err(Error::invalid("budget step must be a fraction in (0, 1)"));
        }
        if !(b.final_fraction > 0.0 && b.final_fraction.is_finite()) {
            return Err(Error::invalid("final budget must be a positive fraction"));
        }
        Ok(())
    }

    fn effective_drop_percent(&self) -> f64 {
        if self.toggles.early_drop {
            self.drop_percent
        } else {
            0.0
        }
    }
}

/// Per-round inputs of [`cloud_one_round`].
#[derive(Clone, Copy, Debug)]
pub struct RoundContext {
    pub seed: u64,
    pub iteration: usize,
    pub round: usize,
    pub prev_acc: f64,
    pub prev_macs: u64,
    pub k_original: usize,
    pub drop_percent: f64,
    pub training: LocalTraining,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub dropped: Vec<usize>,
    pub alive_after: usize,
}

fn client_seed(seed: u64, iteration: usize, round: usize, candidate: usize, client: usize) -> SimRng {
    rng_for(seed, &[stream::CLIENT_TRAIN, iteration as u64, round as u64, candidate as u64, client as u64])
}

fn load(c: &ClientDataset) -> ClientLoad {
    ClientLoad {
        client_id: c.client_id,
        train_num: c.train_num(),
        test_num: c.test_num(),
    }
}

fn group_members<'a>(federation: &'a Federation, partition: &Partition, group: usize) -> Result<Vec<&'a ClientDataset>> {
    let g = partition
        .groups
        .get(group)
        .ok_or_else(|| Error::invalid(format!("group {group} does not exist")))?;
    g.client_ids
        .iter()
        .map(|&id| federation.client(id).ok_or_else(|| Error::invalid(format!("unknown client {id}"))))
        .collect()
}

/// One fine-tune round: every alive candidate trains on its group, accuracies
/// are fused, the worst candidates are dropped, and only the survivors'
/// deltas are uploaded and applied.
pub fn cloud_one_round(
    states: &mut [CandidateState],
    partition: &Partition,
    federation: &Federation,
    ctx: &RoundContext,
    ledger: &mut Vec<LedgerEntry>,
) -> Result<RoundLog> {
    let mut tasks = Vec::new();
    for (si, s) in states.iter().enumerate().filter(|(_, s)| s.alive) {
        for client in group_members(federation, partition, s.assigned_group)? {
            tasks.push((si, client));
        }
    }
    let results = tasks
        .par_iter()
        .map(|&(si, client)| {
            let cand = &states[si].candidate;
            let mut rng = client_seed(ctx.seed, ctx.iteration, ctx.round, cand.candidate_id, client.client_id);
            client_operation(&cand.model, client, &ctx.training, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_state: Vec<Vec<ClientReport>> = vec![Vec::new(); states.len()];
    for (&(si, _), report) in tasks.iter().zip(results) {
        per_state[si].push(report);
    }
    let participants: Vec<usize> = (0..states.len()).filter(|&i| states[i].alive).collect();
    for &si in &participants {
        let acc = fuse_accuracy(&per_state[si])?;
        let s = &mut states[si];
        s.fused_acc_history.push(acc);
        s.degradation = acc_degradation(ctx.prev_acc, ctx.prev_macs, acc, s.candidate.macs)?;
    }
    let dropped = drop_candidates(states, ctx.drop_percent, ctx.k_original, ctx.round);
    for &si in &participants {
        let s = &mut states[si];
        let group: Vec<ClientLoad> = per_state[si]
            .iter()
            .map(|r| ClientLoad {
                client_id: r.client_id,
                train_num: r.train_num,
                test_num: r.test_num,
            })
            .collect();
        let at = RoundRef {
            iteration: ctx.iteration,
            round: ctx.round,
            candidate_id: s.candidate.candidate_id,
        };
        let model = &s.candidate.model;
        ledger.extend(record_round(at, model.macs(), model.param_bytes(), &group, ctx.training.epochs, !s.alive));
        if s.alive {
            let delta = fuse_gradients(&per_state[si])?;
            s.candidate.model.params.add_scaled(&delta, 1.0)?;
        }
    }
    Ok(RoundLog {
        round: ctx.round,
        dropped,
        alive_after: states.iter().filter(|s| s.alive).count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate_id: usize,
    pub layer: usize,
    pub macs: u64,
    pub group: usize,
    pub fused_acc_history: Vec<f64>,
    pub degradation: f64,
    pub dropped_round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub budget: f64,
    /// The previous model already fit this budget and was kept without search.
    pub carried: bool,
    pub chosen_candidate: Option<usize>,
    pub chosen_layer: Option<usize>,
    pub fused_accuracy: f64,
    pub macs: u64,
    pub rounds: usize,
    pub partition_mean_distance: f64,
    pub balance_violated: bool,
    pub candidates: Vec<CandidateReport>,
    pub drops: Vec<RoundLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Validation accuracy of the starting model.
    pub initial_accuracy: f64,
    pub schedule: BudgetSchedule,
    /// `GM_1..GM_T`.
    pub models: Vec<Model>,
    pub reports: Vec<IterationReport>,
    pub ledger: Vec<LedgerEntry>,
}

/// Iteratively prunes `gm0` down the budget schedule, selecting at each step
/// the candidate that loses the least accuracy per MAC saved.
pub fn run_search(config: &SearchConfig, federation: &Federation, gm0: &Model) -> Result<SearchOutcome> {
    config.validate()?;
    let r0 = gm0.macs() as f64;
    let b = config.budget;
    let schedule = budget_schedule(r0, b.delta_fraction * r0, b.decay, b.final_fraction * r0)?;
    let loads: Vec<ClientLoad> = federation.clients.iter().map(load).collect();
    let client_ids: Vec<usize> = loads.iter().map(|l| l.client_id).collect();

    let mut ledger = Vec::new();
    let initial_accuracy = if schedule.budgets.is_empty() {
        0.0
    } else {
        ledger.extend(record_evaluation(0, gm0.macs(), gm0.param_bytes(), &loads));
        validation_accuracy(gm0, federation)?
    };
    let mut gm = gm0.clone();
    let mut prev_acc = initial_accuracy;
    let mut models = Vec::with_capacity(schedule.iterations());
    let mut reports = Vec::with_capacity(schedule.iterations());

    for (idx, &budget) in schedule.budgets.iter().enumerate() {
        let t = idx + 1;
        let partition = if config.toggles.grouping {
            ledger.extend(record_summaries(t, &client_ids, federation.class_count));
            greedy_partition(&federation.summaries(), config.groups, config.balance_tolerance)?
        } else {
            single_group(&federation.summaries())?
        };
        if gm.macs() as f64 <= budget {
            log::info!("iteration {t}: {} MACs already within {budget:.0}", gm.macs());
            reports.push(IterationReport {
                iteration: t,
                budget,
                carried: true,
                chosen_candidate: None,
                chosen_layer: None,
                fused_accuracy: prev_acc,
                macs: gm.macs(),
                rounds: 0,
                partition_mean_distance: partition.mean_distance,
                balance_violated: partition.balance_violated,
                candidates: Vec::new(),
                drops: Vec::new(),
            });
            models.push(gm.clone());
            continue;
        }
        let candidates = generate_candidates(&gm, budget)?;
        let k_original = candidates.len();
        let ids: Vec<usize> = candidates.iter().map(|c| c.candidate_id).collect();
        let assignment = schedule_groups(config, &partition, &ids, t);
        let mut states: Vec<CandidateState> = candidates
            .into_iter()
            .zip(&assignment)
            .map(|(c, &g)| CandidateState::new(c, g))
            .collect();

        let rounds = dynamic_round_number(t, &config.round_schedule, config.toggles.dynamic_rounds);
        let mut drops = Vec::with_capacity(rounds);
        for round in 1..=rounds {
            let ctx = RoundContext {
                seed: config.seed,
                iteration: t,
                round,
                prev_acc,
                prev_macs: gm.macs(),
                k_original,
                drop_percent: config.effective_drop_percent(),
                training: config.training,
            };
            drops.push(cloud_one_round(&mut states, &partition, federation, &ctx, &mut ledger)?);
        }

        let best = states
            .iter()
            .filter(|s| s.alive)
            .min_by(|a, b| {
                a.degradation
                    .total_cmp(&b.degradation)
                    .then(a.candidate.candidate_id.cmp(&b.candidate.candidate_id))
            })
            .expect("at least one candidate survives");
        let fused = best.last_accuracy().expect("every survivor completed a round");
        log::info!(
            "iteration {t}: budget {budget:.0}, chose layer {} at {} MACs, fused accuracy {fused:.4}",
            best.candidate.pruned_layer_index,
            best.candidate.macs
        );
        reports.push(IterationReport {
            iteration: t,
            budget,
            carried: false,
            chosen_candidate: Some(best.candidate.candidate_id),
            chosen_layer: Some(best.candidate.pruned_layer_index),
            fused_accuracy: fused,
            macs: best.candidate.macs,
            rounds,
            partition_mean_distance: partition.mean_distance,
            balance_violated: partition.balance_violated,
            candidates: states
                .iter()
                .map(|s| CandidateReport {
                    candidate_id: s.candidate.candidate_id,
                    layer: s.candidate.pruned_layer_index,
                    macs: s.candidate.macs,
                    group: s.assigned_group,
                    fused_acc_history: s.fused_acc_history.clone(),
                    degradation: s.degradation,
                    dropped_round: s.dropped_round,
                })
                .collect(),
            drops,
        });
        prev_acc = fused;
        gm = best.candidate.model.clone();
        models.push(gm.clone());
    }
    Ok(SearchOutcome {
        initial_accuracy,
        schedule,
        models,
        reports,
        ledger,
    })
}

fn schedule_groups(config: &SearchConfig, partition: &Partition, ids: &[usize], t: usize) -> Vec<usize> {
    if !config.toggles.grouping {
        return vec![0; ids.len()];
    }
    let mut rng = rng_for(config.seed, &[stream::SCHEDULE, t as u64]);
    schedule(partition.group_count(), ids, &mut rng)
        .into_iter()
        .map(|a| a.group_id)
        .collect()
}
