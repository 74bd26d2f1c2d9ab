use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{stack, ClientDataset};
use crate::error::{Error, Result};
use crate::nn::{evaluate, loss_and_grad, sgd_step, GradientDelta, Model};
use crate::rng::SimRng;

/// Local SGD settings shared by search fine-tuning and FedAvg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub epochs: usize,
    pub lr: f64,
    /// Upper bound; a client with fewer samples trains full-batch.
    pub batch_size: usize,
}

impl LocalTraining {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("local epochs must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: usize,
    /// Validation accuracy after local training.
    pub acc: f64,
    pub test_num: usize,
    pub train_num: usize,
    /// Parameters after local training minus parameters before.
    pub grad: Option<GradientDelta>,
}

/// Trains a copy of `model` on the client's training shard for `epochs`
/// shuffled passes of mini-batch SGD, then evaluates it on the validation shard.
pub fn client_operation(model: &Model, client: &ClientDataset, training: &LocalTraining, rng: &mut SimRng) -> Result<ClientReport> {
    if client.train.is_empty() || client.validation.is_empty() {
        return Err(Error::EmptySamples(format!("client {} has an empty shard", client.client_id)));
    }
    let mut params = model.params.clone();
    let mut order: Vec<usize> = (0..client.train.len()).collect();
    let batch = training.batch_size.min(order.len());
    for _ in 0..training.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let (x, y) = stack(chunk.iter().map(|&i| &client.train[i]));
            let (_, grad) = loss_and_grad(&model.arch, &params, &x, &y)?;
            params = sgd_step(&params, &grad, training.lr)?;
        }
    }
    let (x, y) = stack(&client.validation);
    let (acc, _) = evaluate(&model.arch, &params, &x, &y)?;
    Ok(ClientReport {
        client_id: client.client_id,
        acc,
        test_num: client.test_num(),
        train_num: client.train_num(),
        grad: Some(params.delta_from(&model.params)?),
    })
}
