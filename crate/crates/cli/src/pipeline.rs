//! End-to-end runs built from the core crate: data preparation, pretraining,
//! search, final tuning, and the width-multiplier baseline.

use decnas_core::coordinator::{fl_tune, run_search, test_accuracy, SearchOutcome};
use decnas_core::cost::{summarize, CostSummary};
use decnas_core::data::{load_dataset, shard_clients, Federation};
use decnas_core::nn::{Architecture, Model};
use decnas_core::pruner::width_multiplier;
use decnas_core::rng::{rng_for, stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierRow {
    pub method: String,
    pub iteration: usize,
    pub macs: u64,
    pub macs_ratio: f64,
    pub top1_accuracy: f64,
}

/// Federation plus the (pretrained) starting model.
pub struct Prepared {
    pub federation: Federation,
    pub gm0: Model,
}

pub fn build_federation(config: &RunConfig) -> decnas_core::Result<Federation> {
    let samples = load_dataset(&config.data_source(), config.input_shape(), config.data.classes)?;
    shard_clients(samples, config.data.clients, config.shard_mode(), config.data.classes, config.run.seed)
}

pub fn prepare(config: &RunConfig) -> anyhow::Result<Prepared> {
    let federation = build_federation(config)?;
    log::info!("federation: {} clients", federation.clients.len());
    let arch = config.architecture()?;
    let mut gm0 = Model::init(arch, &mut rng_for(config.run.seed, &[stream::INIT]));
    if let Some(pretrain) = config.pretrain_config() {
        gm0 = fl_tune(&gm0, &federation, &pretrain)?;
        log::info!("pretrained starting model: test accuracy {:.4}", test_accuracy(&gm0, &federation)?);
    }
    Ok(Prepared { federation, gm0 })
}

pub struct SearchRun {
    pub gm0: Model,
    pub outcome: SearchOutcome,
    pub frontier: Vec<FrontierRow>,
    pub cost: CostSummary,
}

/// Iterations that get a final-tuned frontier row.
pub fn frontier_iterations(total: usize, stride: usize) -> Vec<usize> {
    (0..=total).filter(|&t| t % stride == 0 || t == total).collect()
}

pub fn search(config: &RunConfig) -> anyhow::Result<SearchRun> {
    let Prepared { federation, gm0 } = prepare(config)?;
    let outcome = run_search(&config.search_config(), &federation, &gm0)?;
    let r0 = gm0.macs();
    let chosen = frontier_iterations(outcome.models.len(), config.output.frontier_stride);
    let frontier = chosen
        .par_iter()
        .map(|&t| {
            let model = if t == 0 { &gm0 } else { &outcome.models[t - 1] };
            let tuned = fl_tune(model, &federation, &config.final_tune_config(t))?;
            let acc = test_accuracy(&tuned, &federation)?;
            log::info!("frontier: iteration {t}, {} MACs, test accuracy {acc:.4}", tuned.macs());
            Ok(FrontierRow {
                method: config.method().to_string(),
                iteration: t,
                macs: tuned.macs(),
                macs_ratio: tuned.macs() as f64 / r0 as f64,
                top1_accuracy: acc,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let cost = summarize(&outcome.ledger, config.output.seconds_per_mac);
    Ok(SearchRun {
        gm0,
        outcome,
        frontier: sort_frontier(frontier),
        cost,
    })
}

pub fn sort_frontier(mut rows: Vec<FrontierRow>) -> Vec<FrontierRow> {
    rows.sort_by(|a, b| {
        b.macs
            .cmp(&a.macs)
            .then_with(|| a.method.cmp(&b.method))
            .then(a.iteration.cmp(&b.iteration))
    });
    rows
}

/// Largest factor on a 0.001 grid whose scaled architecture fits `target_macs`.
pub fn matched_factor(arch: &Architecture, target_macs: u64) -> Option<f64> {
    (1..=1000)
        .rev()
        .map(|k| k as f64 / 1000.0)
        .find(|&f| width_multiplier(arch, f).is_ok_and(|a| a.macs() <= target_macs))
}

/// Trains each width-multiplied architecture from scratch with FedAvg.
pub fn baseline(config: &RunConfig, factors: &[f64]) -> anyhow::Result<Vec<FrontierRow>> {
    let federation = build_federation(config)?;
    let arch = config.architecture()?;
    let r0 = arch.macs();
    let rows = factors
        .par_iter()
        .enumerate()
        .map(|(i, &factor)| {
            let scaled = width_multiplier(&arch, factor)?;
            let init_seed = decnas_core::rng::derive_seed(config.run.seed, &[stream::INIT, factor.to_bits()]);
            let model = Model::init(scaled, &mut rng_for(init_seed, &[]));
            let tuned = fl_tune(&model, &federation, &config.baseline_config(factor))?;
            let acc = test_accuracy(&tuned, &federation)?;
            log::info!("baseline: factor {factor}, {} MACs, test accuracy {acc:.4}", tuned.macs());
            Ok(FrontierRow {
                method: "width_multiplier".into(),
                iteration: i,
                macs: tuned.macs(),
                macs_ratio: tuned.macs() as f64 / r0 as f64,
                top1_accuracy: acc,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontier_iteration_selection() {
        assert_eq!(frontier_iterations(10, 4), vec![0, 4, 8, 10]);
        assert_eq!(frontier_iterations(8, 4), vec![0, 4, 8]);
        assert_eq!(frontier_iterations(0, 3), vec![0]);
    }

    #[test]
    fn matched_factor_fits() {
        let config = RunConfig::default();
        let arch = config.architecture().unwrap();
        let target = arch.macs() / 2;
        let f = matched_factor(&arch, target).unwrap();
        assert!(width_multiplier(&arch, f).unwrap().macs() <= target);
        assert_eq!(matched_factor(&arch, arch.macs()), Some(1.0));
    }
}
