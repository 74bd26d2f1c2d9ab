use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinator::{client_operation, fuse_gradients, LocalTraining};
use crate::data::{stack, Federation, Sample};
use crate::error::{Error, Result};
use crate::nn::{evaluate, Model};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlTuneConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub training: LocalTraining,
    pub seed: u64,
}

/// FedAvg: each round samples clients uniformly without replacement, trains
/// locally, and applies the training-size-weighted mean delta.
pub fn fl_tune(model: &Model, federation: &Federation, config: &FlTuneConfig) -> Result<Model> {
    fl_tune_observed(model, federation, config, |_, _| {})
}

/// [`fl_tune`] that hands the model to `observer` after every round.
pub fn fl_tune_observed(
    model: &Model,
    federation: &Federation,
    config: &FlTuneConfig,
    mut observer: impl FnMut(usize, &Model),
) -> Result<Model> {
    if config.rounds == 0 {
        return Err(Error::invalid("fl_tune needs at least one round"));
    }
    if config.clients_per_round == 0 {
        return Err(Error::invalid("clients_per_round must be at least 1"));
    }
    config.training.validate()?;
    let mut model = model.clone();
    for round in 0..config.rounds {
        let mut sample_rng = rng_for(config.seed, &[stream::FL_SAMPLE, round as u64]);
        let take = config.clients_per_round.min(federation.clients.len());
        let mut chosen: Vec<_> = federation.clients.choose_multiple(&mut sample_rng, take).collect();
        chosen.sort_by_key(|c| c.client_id);
        let reports = chosen
            .par_iter()
            .map(|c| {
                let mut rng = rng_for(config.seed, &[stream::FL_TUNE, round as u64, c.client_id as u64]);
                client_operation(&model, c, &config.training, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let delta = fuse_gradients(&reports)?;
        model.params.add_scaled(&delta, 1.0)?;
        observer(round + 1, &model);
    }
    Ok(model)
}

const EVAL_CHUNK: usize = 256;

fn pooled_accuracy<'a>(model: &Model, samples: impl Iterator<Item = &'a Sample>) -> Result<f64> {
    let samples: Vec<&Sample> = samples.collect();
    if samples.is_empty() {
        return Err(Error::EmptySamples("no samples to evaluate".into()));
    }
    let correct = samples
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, y) = stack(chunk.iter().copied());
            evaluate(&model.arch, &model.params, &x, &y).map(|(acc, n)| (acc * n as f64).round() as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correct.iter().sum::<usize>() as f64 / samples.len() as f64)
}

/// Top-1 accuracy over the union of all clients' test shards.
pub fn test_accuracy(model: &Model, federation: &Federation) -> Result<f64> {
    pooled_accuracy(model, federation.test_samples())
}

/// Top-1 accuracy over the union of all clients' validation shards, i.e. the
/// validation-size-weighted mean of per-client accuracies.
pub fn validation_accuracy(model: &Model, federation: &Federation) -> Result<f64> {
    pooled_accuracy(model, federation.validation_samples())
}
