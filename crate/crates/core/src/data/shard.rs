use rand::seq::SliceRandom;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::data::{apportion, ClientDataset, Federation, Sample, MIN_CLIENT_SAMPLES};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardMode {
    /// Uniform random split; shard sizes differ by at most one.
    Iid,
    /// Each client holds exactly `classes_per_client` classes. Shard sizes are
    /// log-normal with shape `size_sigma`.
    LabelSkew { classes_per_client: usize, size_sigma: f64 },
}

/// Distributes every sample to exactly one of `num_clients` clients and
/// splits each client 6:2:2. Clients left with fewer than
/// [`MIN_CLIENT_SAMPLES`] are dropped with a warning.
pub fn shard_clients(
    samples: Vec<Sample>,
    num_clients: usize,
    mode: ShardMode,
    class_count: usize,
    seed: u64,
) -> Result<Federation> {
    let shards = assign_shards(samples, num_clients, mode, class_count, seed)?;
    let mut clients = Vec::with_capacity(shards.len());
    for (id, shard) in shards.into_iter().enumerate() {
        let mut rng = rng_for(seed, &[stream::SPLIT, id as u64]);
        match ClientDataset::new(id, shard, class_count, &mut rng) {
            Ok(c) => clients.push(c),
            Err(Error::InsufficientSamples(msg)) => log::warn!("excluding client {id}: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Federation::new(clients, class_count)
}

pub(crate) fn assign_shards(
    mut samples: Vec<Sample>,
    num_clients: usize,
    mode: ShardMode,
    class_count: usize,
    seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    if num_clients == 0 {
        return Err(Error::invalid("num_clients must be at least 1"));
    }
    let mut rng = rng_for(seed, &[stream::SHARD]);
    match mode {
        ShardMode::Iid => {
            if samples.len() < MIN_CLIENT_SAMPLES * num_clients {
                return Err(Error::InsufficientSamples(format!(
                    "{} samples for {num_clients} clients",
                    samples.len()
                )));
            }
            samples.shuffle(&mut rng);
            let base = samples.len() / num_clients;
            let extra = samples.len() % num_clients;
            let mut iter = samples.into_iter();
            Ok((0..num_clients)
                .map(|i| iter.by_ref().take(base + usize::from(i < extra)).collect())
                .collect())
        }
        ShardMode::LabelSkew {
            classes_per_client: k,
            size_sigma,
        } => {
            if k == 0 || k > class_count {
                return Err(Error::invalid(format!("classes_per_client must be in 1..={class_count}")));
            }
            let mut perm: Vec<usize> = (0..class_count).collect();
            perm.shuffle(&mut rng);
            let size_dist = LogNormal::new(0.0, size_sigma.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
            let weights: Vec<f64> = (0..num_clients).map(|_| size_dist.sample(&mut rng)).collect();

            let mut members: Vec<Vec<usize>> = vec![Vec::new(); class_count];
            for client in 0..num_clients {
                for j in 0..k {
                    members[perm[(client * k + j) % class_count]].push(client);
                }
            }
            let mut pools: Vec<Vec<Sample>> = (0..class_count).map(|_| Vec::new()).collect();
            for s in samples {
                pools[s.label].push(s);
            }
            let floor = MIN_CLIENT_SAMPLES.div_ceil(k);
            let mut shards: Vec<Vec<Sample>> = (0..num_clients).map(|_| Vec::new()).collect();
            for (class, mut pool) in pools.into_iter().enumerate() {
                let holders = &members[class];
                if holders.is_empty() {
                    if pool.is_empty() {
                        continue;
                    }
                    return Err(Error::invalid(format!(
                        "class {class} is held by no client; need num_clients * classes_per_client >= {class_count}"
                    )));
                }
                if pool.len() < floor * holders.len() {
                    return Err(Error::InsufficientSamples(format!(
                        "class {class} has {} samples for {} clients needing {floor} each",
                        pool.len(),
                        holders.len()
                    )));
                }
                pool.shuffle(&mut rng);
                let w: Vec<f64> = holders.iter().map(|&c| weights[c]).collect();
                let shares = apportion(pool.len() - floor * holders.len(), &w);
                let mut iter = pool.into_iter();
                for (&client, share) in holders.iter().zip(shares) {
                    shards[client].extend(iter.by_ref().take(floor + share));
                }
            }
            Ok(shards)
        }
    }
}
